#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kspd/matrix.hpp"
#include "kspd/training.hpp"

namespace kspd {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// DSM: "DSM1", u32 LE rows, u32 LE cols, u8 dtype (1 = f64), row-major LE f64.

inline constexpr std::size_t kDsmHeaderBytes = 13;
inline constexpr unsigned char kDsmFloat64 = 1;

std::string encode_dsm(const Matrix& m);
/// source names the input in error messages.
Matrix decode_dsm(std::string_view bytes, const std::string& source = "<memory>");

void write_dsm(const fs::path& path, const Matrix& m);
Matrix read_dsm(const fs::path& path);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, std::string_view bytes);

/// Row vector view of a flat vector (1 × n).
Matrix row_matrix(const std::vector<double>& v);

// ---------------------------------------------------------------------------
// Manifest: "relative/path,label[,split]" per line in <dir>/manifest.csv.

inline constexpr const char* kManifestName = "manifest.csv";

enum class Split { Train, Test };

struct ManifestEntry {
  std::string path;
  int label = 0;
  Split split = Split::Train;
};

/// Blank lines and lines starting with '#' are skipped.
std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::string& source);
std::string render_manifest(const std::vector<ManifestEntry>& entries);

/// Reads and validates <dir>/manifest.csv: contiguous labels from 0, every
/// path exists.
std::vector<ManifestEntry> read_manifest(const fs::path& dir);

struct SplitData {
  Dataset train;
  Dataset test;
};

SplitData load_dataset(const fs::path& dir);
/// Writes samples/<index>.dsm plus the manifest.
void save_dataset(const fs::path& dir, const Dataset& train, const Dataset& test);

// ---------------------------------------------------------------------------
// key = value files

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// '#' starts a comment. Duplicate keys are errors.
KeyValues parse_key_values(std::string_view text, const std::string& source);

/// Keys mirror the TrainConfig fields; kernel is gaussian, linear or
/// linear:centered. Unknown keys are errors.
TrainConfig parse_train_config(std::string_view text, const std::string& source);
std::string render_train_config(const TrainConfig& cfg);

/// Keys mirror the DatasetSpec fields; variant is covariance or higher_order.
DatasetSpec parse_dataset_spec(std::string_view text, const std::string& source);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Model directory: model.txt metadata and one DSM per tensor.

inline constexpr const char* kModelMetaName = "model.txt";
inline constexpr const char* kMetricsName = "metrics.csv";

void save_model(const fs::path& dir, const ModelState& state);
ModelState load_model(const fs::path& dir);

/// Header "epoch,stage,loss,acc,theta" plus one line per record.
std::string render_metrics(const std::vector<EpochMetrics>& metrics);
std::string render_metrics_line(const EpochMetrics& m);

}  // namespace kspd
