#include "kspd/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "kspd/errors.hpp"

namespace kspd {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFU));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFU));
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int k = 0; k < width; ++k)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + k])) << (8 * k);
  return v;
}

std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start)));
    if (pos == std::string_view::npos) return parts;
    start = pos + 1;
  }
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find('\n', start);
    if (pos == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  return lines;
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw FormatError("io", what + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

double parse_f64(const std::string& text, const std::string& what) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw FormatError("io", what + ": expected a number, got '" + text + "'");
  }
  return v;
}

int parse_label(const std::string& text, const std::string& what) {
  int v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty() || v < 0) {
    throw FormatError("io", what + ": label must be a non-negative integer, got '" + text + "'");
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string encode_dsm(const Matrix& m) {
  if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) {
    throw DimensionError("io", "matrix too large for DSM");
  }
  std::string out = "DSM1";
  out.reserve(kDsmHeaderBytes + 8 * m.size());
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  out.push_back(static_cast<char>(kDsmFloat64));
  for (double v : m.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Matrix decode_dsm(std::string_view bytes, const std::string& source) {
  auto fail = [&](std::size_t offset, const std::string& what) {
    return FormatError("io", source + ": " + what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < 4 || bytes.substr(0, 4) != "DSM1") throw fail(0, "bad magic (expected DSM1)");
  if (bytes.size() < kDsmHeaderBytes) throw fail(bytes.size(), "truncated header");
  const auto rows = get_le(bytes, 4, 4);
  const auto cols = get_le(bytes, 8, 4);
  const auto dtype = static_cast<unsigned char>(bytes[12]);
  if (dtype != kDsmFloat64) throw fail(12, "unknown dtype tag " + std::to_string(dtype));
  if (rows == 0 || cols == 0) throw fail(4, "empty matrix " + std::to_string(rows) + "x" + std::to_string(cols));
  const std::uint64_t expected = kDsmHeaderBytes + 8 * rows * cols;
  if (bytes.size() < expected) {
    throw fail(bytes.size(), "truncated payload (expected " + std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) throw fail(expected, "trailing bytes after payload");

  std::vector<double> values(rows * cols);
  for (std::size_t k = 0; k < values.size(); ++k)
    values[k] = std::bit_cast<double>(get_le(bytes, kDsmHeaderBytes + 8 * k, 8));
  for (std::size_t k = 0; k < values.size(); ++k)
    if (!std::isfinite(values[k])) throw fail(kDsmHeaderBytes + 8 * k, "non-finite value");
  return Matrix(rows, cols, std::move(values));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("io", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("io", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("io", "write failed for " + path.string());
}

void write_dsm(const fs::path& path, const Matrix& m) { write_file(path, encode_dsm(m)); }

Matrix read_dsm(const fs::path& path) { return decode_dsm(read_file(path), path.string()); }

Matrix row_matrix(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

// ---------------------------------------------------------------------------

std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::string& source) {
  std::vector<ManifestEntry> entries;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    const std::string where = source + ":" + std::to_string(i + 1);
    const auto fields = split(line, ',');
    if (fields.size() < 2 || fields.size() > 3) {
      throw FormatError("io", where + ": expected path,label[,split]");
    }
    ManifestEntry e;
    e.path = fields[0];
    if (e.path.empty()) throw FormatError("io", where + ": empty path");
    e.label = parse_label(fields[1], where);
    if (fields.size() == 3) {
      if (fields[2] == "train") {
        e.split = Split::Train;
      } else if (fields[2] == "test") {
        e.split = Split::Test;
      } else {
        throw FormatError("io", where + ": split must be train or test, got '" + fields[2] + "'");
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string render_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries)
    out += e.path + "," + std::to_string(e.label) + "," + (e.split == Split::Test ? "test" : "train") + "\n";
  return out;
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  const fs::path file = dir / kManifestName;
  auto entries = parse_manifest(read_file(file), file.string());
  if (entries.empty()) throw InputError("io", file.string() + ": no samples");
  int top = -1;
  for (const auto& e : entries) top = std::max(top, e.label);
  std::vector<bool> seen(static_cast<std::size_t>(top + 1), false);
  for (const auto& e : entries) {
    seen[static_cast<std::size_t>(e.label)] = true;
    if (!fs::exists(dir / e.path)) throw InputError("io", file.string() + ": missing sample file " + e.path);
  }
  for (std::size_t c = 0; c < seen.size(); ++c)
    if (!seen[c]) {
      throw InputError("io", file.string() + ": labels are not contiguous (no sample with label " +
                                 std::to_string(c) + ")");
    }
  return entries;
}

SplitData load_dataset(const fs::path& dir) {
  SplitData out;
  for (const auto& e : read_manifest(dir)) {
    Dataset& d = e.split == Split::Test ? out.test : out.train;
    d.x.push_back(read_dsm(dir / e.path));
    d.y.push_back(e.label);
  }
  return out;
}

void save_dataset(const fs::path& dir, const Dataset& train, const Dataset& test) {
  std::vector<ManifestEntry> entries;
  std::size_t index = 0;
  for (const Dataset* d : {&train, &test}) {
    for (std::size_t i = 0; i < d->size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "samples/%06zu.dsm", index++);
      write_dsm(dir / name, d->x[i]);
      entries.push_back({name, d->y[i], d == &test ? Split::Test : Split::Train});
    }
  }
  write_file(dir / kManifestName, render_manifest(entries));
}

// ---------------------------------------------------------------------------

KeyValues parse_key_values(std::string_view text, const std::string& source) {
  KeyValues kv;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view raw = lines[i];
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(i + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("io", where + ": expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty() || value.empty()) throw FormatError("io", where + ": empty key or value");
    for (const auto& [k, v] : kv)
      if (k == key) throw FormatError("io", where + ": duplicate key '" + key + "'");
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw FormatError("io", "cannot format number");
  return std::string(buf, ptr);
}

TrainConfig parse_train_config(std::string_view text, const std::string& source) {
  TrainConfig cfg;
  for (const auto& [key, value] : parse_key_values(text, source)) {
    const std::string what = source + ": " + key;
    if (key == "batch_size") {
      cfg.batch_size = parse_u64(value, what);
    } else if (key == "stage1_epochs") {
      cfg.stage1_epochs = parse_u64(value, what);
    } else if (key == "total_epochs") {
      cfg.total_epochs = parse_u64(value, what);
    } else if (key == "lr_stage1") {
      cfg.lr_stage1 = parse_f64(value, what);
    } else if (key == "lr_stage2") {
      cfg.lr_stage2 = parse_f64(value, what);
    } else if (key == "theta_init") {
      cfg.theta_init = parse_f64(value, what);
    } else if (key == "seed") {
      cfg.seed = parse_u64(value, what);
    } else if (key == "kernel") {
      if (value.starts_with("gaussian:")) {
        throw FormatError("io", what + ": give the initial width with theta_init, not gaussian:<theta>");
      }
      cfg.kernel = parse_kernel_kind(value);
    } else if (key == "reg_rel_eps") {
      cfg.reg_rel_eps = parse_f64(value, what);
    } else if (key == "descriptor_block") {
      cfg.descriptor_block = parse_descriptor_block(value);
    } else if (key == "conv_c1") {
      cfg.conv_c1 = parse_u64(value, what);
    } else if (key == "conv_c2") {
      cfg.conv_c2 = parse_u64(value, what);
    } else if (key == "image_height") {
      cfg.image_height = parse_u64(value, what);
    } else {
      throw FormatError("io", source + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::string render_train_config(const TrainConfig& cfg) {
  std::string k = to_string(cfg.kernel);
  if (std::holds_alternative<GaussianKernel>(cfg.kernel)) k = "gaussian";
  std::ostringstream out;
  out << "batch_size = " << cfg.batch_size << "\n"
      << "stage1_epochs = " << cfg.stage1_epochs << "\n"
      << "total_epochs = " << cfg.total_epochs << "\n"
      << "lr_stage1 = " << format_double(cfg.lr_stage1) << "\n"
      << "lr_stage2 = " << format_double(cfg.lr_stage2) << "\n"
      << "theta_init = " << format_double(cfg.theta_init) << "\n"
      << "seed = " << cfg.seed << "\n"
      << "kernel = " << k << "\n"
      << "reg_rel_eps = " << format_double(cfg.reg_rel_eps) << "\n"
      << "descriptor_block = " << to_string(cfg.descriptor_block) << "\n"
      << "conv_c1 = " << cfg.conv_c1 << "\n"
      << "conv_c2 = " << cfg.conv_c2 << "\n"
      << "image_height = " << cfg.image_height << "\n";
  return out.str();
}

DatasetSpec parse_dataset_spec(std::string_view text, const std::string& source) {
  DatasetSpec spec;
  for (const auto& [key, value] : parse_key_values(text, source)) {
    const std::string what = source + ": " + key;
    if (key == "num_classes") {
      spec.num_classes = parse_u64(value, what);
    } else if (key == "train_per_class") {
      spec.train_per_class = parse_u64(value, what);
    } else if (key == "test_per_class") {
      spec.test_per_class = parse_u64(value, what);
    } else if (key == "dim") {
      spec.dim = parse_u64(value, what);
    } else if (key == "count") {
      spec.count = parse_u64(value, what);
    } else if (key == "variant") {
      spec.variant = parse_dataset_variant(value);
    } else if (key == "seed") {
      spec.seed = parse_u64(value, what);
    } else if (key == "spectrum_ratio") {
      spec.spectrum_ratio = parse_f64(value, what);
    } else {
      throw FormatError("io", source + ": unknown key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------

namespace {

struct Tensor {
  std::string name;
  Matrix value;
};

std::vector<Tensor> parameter_tensors(const Parameters& p, const std::string& prefix) {
  std::vector<Tensor> t;
  if (!p.conv.empty()) {
    t.push_back({prefix + "conv.w1", p.conv.w1});
    t.push_back({prefix + "conv.b1", row_matrix(p.conv.b1)});
    t.push_back({prefix + "conv.w2", p.conv.w2});
    t.push_back({prefix + "conv.b2", row_matrix(p.conv.b2)});
  }
  t.push_back({prefix + "theta", Matrix(1, 1, p.theta)});
  t.push_back({prefix + "bn.gamma", row_matrix(p.bn.gamma)});
  t.push_back({prefix + "bn.beta", row_matrix(p.bn.beta)});
  t.push_back({prefix + "fc.w", p.fc.w});
  t.push_back({prefix + "fc.b", row_matrix(p.fc.b)});
  return t;
}

std::vector<double> as_vector(const Matrix& m, const std::string& name, std::size_t expected) {
  if (m.rows() != 1 || m.cols() != expected) {
    throw FormatError("io", name + ": expected shape 1x" + std::to_string(expected) + ", got " +
                                std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  return {m.data().begin(), m.data().end()};
}

Matrix expect_shape(Matrix m, const std::string& name, std::size_t rows, std::size_t cols) {
  if (m.rows() != rows || m.cols() != cols) {
    throw FormatError("io", name + ": expected shape " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
  }
  return m;
}

struct Shapes {
  bool conv = false;
  std::size_t in = 0, c1 = 0, c2 = 0, features = 0, classes = 0;
};

Parameters read_parameters(const fs::path& dir, const std::string& prefix, const Shapes& s) {
  auto load = [&](const std::string& name) { return read_dsm(dir / (prefix + name + ".dsm")); };
  Parameters p;
  if (s.conv) {
    p.conv.w1 = expect_shape(load("conv.w1"), prefix + "conv.w1", s.c1, s.in * 9);
    p.conv.b1 = as_vector(load("conv.b1"), prefix + "conv.b1", s.c1);
    p.conv.w2 = expect_shape(load("conv.w2"), prefix + "conv.w2", s.c2, s.c1 * 9);
    p.conv.b2 = as_vector(load("conv.b2"), prefix + "conv.b2", s.c2);
  }
  p.theta = as_vector(load("theta"), prefix + "theta", 1)[0];
  p.bn.gamma = as_vector(load("bn.gamma"), prefix + "bn.gamma", s.features);
  p.bn.beta = as_vector(load("bn.beta"), prefix + "bn.beta", s.features);
  p.fc.w = expect_shape(load("fc.w"), prefix + "fc.w", s.classes, s.features);
  p.fc.b = as_vector(load("fc.b"), prefix + "fc.b", s.classes);
  return p;
}

}  // namespace

void save_model(const fs::path& dir, const ModelState& state) {
  fs::create_directories(dir);
  const bool gaussian = std::holds_alternative<GaussianKernel>(state.net.kernel);
  std::ostringstream meta;
  meta << "format = kspd-model-1\n"
       << "kernel = " << (gaussian ? std::string("gaussian") : to_string(state.net.kernel)) << "\n"
       << "reg_rel_eps = " << format_double(state.net.reg.rel_eps) << "\n"
       << "descriptor_block = " << (state.net.use_conv ? "conv" : "none") << "\n"
       << "image_height = " << state.net.image_height << "\n"
       << "image_width = " << state.net.image_width << "\n"
       << "input_rows = " << state.input_rows << "\n"
       << "input_cols = " << state.input_cols << "\n"
       << "num_classes = " << state.num_classes << "\n"
       << "conv_c1 = " << (state.net.use_conv ? state.params.conv.c1() : 0) << "\n"
       << "conv_c2 = " << (state.net.use_conv ? state.params.conv.c2() : 0) << "\n"
       << "step = " << state.step << "\n"
       << "group_steps =";
  for (auto s : state.group_steps) meta << " " << s;
  meta << "\n";
  write_file(dir / kModelMetaName, meta.str());

  std::vector<Tensor> all = parameter_tensors(state.params, "");
  for (auto& t : parameter_tensors(state.adam_m, "adam_m.")) all.push_back(std::move(t));
  for (auto& t : parameter_tensors(state.adam_v, "adam_v.")) all.push_back(std::move(t));
  all.push_back({"bn.running_mean", row_matrix(state.stats.running_mean)});
  all.push_back({"bn.running_var", row_matrix(state.stats.running_var)});
  for (const auto& t : all) write_dsm(dir / (t.name + ".dsm"), t.value);
}

ModelState load_model(const fs::path& dir) {
  const fs::path meta_path = dir / kModelMetaName;
  std::map<std::string, std::string> meta;
  for (auto& [k, v] : parse_key_values(read_file(meta_path), meta_path.string())) meta[k] = v;
  auto get = [&](const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("io", meta_path.string() + ": missing key '" + key + "'");
    return it->second;
  };
  auto get_u = [&](const std::string& key) { return parse_u64(get(key), meta_path.string() + ": " + key); };
  if (get("format") != "kspd-model-1") throw FormatError("io", meta_path.string() + ": unknown model format");

  ModelState s;
  s.net.kernel = parse_kernel_kind(get("kernel"));
  s.net.reg.rel_eps = parse_f64(get("reg_rel_eps"), meta_path.string() + ": reg_rel_eps");
  s.net.use_conv = parse_descriptor_block(get("descriptor_block")) == DescriptorBlock::Conv;
  s.net.image_height = get_u("image_height");
  s.net.image_width = get_u("image_width");
  s.input_rows = get_u("input_rows");
  s.input_cols = get_u("input_cols");
  s.num_classes = get_u("num_classes");
  s.step = get_u("step");

  Shapes shapes;
  shapes.conv = s.net.use_conv;
  shapes.in = s.input_rows;
  shapes.c1 = get_u("conv_c1");
  shapes.c2 = get_u("conv_c2");
  shapes.classes = s.num_classes;
  shapes.features = triu_length(s.net.use_conv ? shapes.c2 : s.input_rows);

  s.params = read_parameters(dir, "", shapes);
  s.adam_m = read_parameters(dir, "adam_m.", shapes);
  s.adam_v = read_parameters(dir, "adam_v.", shapes);
  if (std::holds_alternative<GaussianKernel>(s.net.kernel)) s.net.kernel = GaussianKernel{s.params.theta};
  s.stats.running_mean = as_vector(read_dsm(dir / "bn.running_mean.dsm"), "bn.running_mean", shapes.features);
  s.stats.running_var = as_vector(read_dsm(dir / "bn.running_var.dsm"), "bn.running_var", shapes.features);

  const auto steps = split(get("group_steps"), ' ');
  for (const auto& t : steps)
    if (!t.empty()) s.group_steps.push_back(parse_u64(t, meta_path.string() + ": group_steps"));
  if (s.group_steps.size() != param_groups(s.params).size()) {
    throw FormatError("io", meta_path.string() + ": group_steps has the wrong length");
  }
  return s;
}

std::string render_metrics_line(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + std::to_string(m.stage) + "," + format_double(m.loss) + "," +
         format_double(m.acc) + "," + format_double(m.theta) + "\n";
}

std::string render_metrics(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,stage,loss,acc,theta\n";
  for (const auto& m : metrics) out += render_metrics_line(m);
  return out;
}

}  // namespace kspd
