#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kspd/network.hpp"

namespace kspd {

/// Labeled descriptor matrices (or c × (h·w) images in conv mode).
struct Dataset {
  std::vector<Matrix> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return x.size(); }
  bool empty() const noexcept { return x.empty(); }
  /// max label + 1; labels are validated as 0..C-1 with every class present.
  std::size_t num_classes() const;
  /// Throws InputError on empty data, mismatched shapes or a label gap.
  void validate(const char* what) const;
};

enum class DescriptorBlock { None, Conv };

DescriptorBlock parse_descriptor_block(const std::string& s);
std::string to_string(DescriptorBlock b);

struct TrainConfig {
  std::size_t batch_size = 20;
  std::size_t stage1_epochs = 15;
  std::size_t total_epochs = 30;
  double lr_stage1 = 1e-2;
  double lr_stage2 = 1e-4;
  double theta_init = 0.1;
  std::uint64_t seed = 1;
  KernelKind kernel = GaussianKernel{0.1};  // θ here is ignored; theta_init is used
  double reg_rel_eps = 1e-6;
  DescriptorBlock descriptor_block = DescriptorBlock::None;
  std::size_t conv_c1 = 16;
  std::size_t conv_c2 = 32;
  std::size_t image_height = 0;  // conv mode; width = sample cols / height

  void validate() const;
};

inline constexpr double kThetaMin = 1e-4;

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Everything needed to resume training or run inference.
struct ModelState {
  NetworkConfig net;
  std::size_t input_rows = 0;
  std::size_t input_cols = 0;
  std::size_t num_classes = 0;
  Parameters params;
  BatchNormStats stats;
  Parameters adam_m;
  Parameters adam_v;
  std::vector<std::uint64_t> group_steps;  // Adam step count per parameter group
  std::uint64_t step = 0;                  // optimizer calls

  static ModelState init(const TrainConfig& cfg, std::size_t input_rows, std::size_t input_cols,
                         std::size_t num_classes, Rng& rng);
};

using GroupFilter = std::function<bool(const std::string& group)>;

/// In-place Adam update of the groups accepted by trainable (all by
/// default). Frozen groups keep their values, moments and step counts.
/// Throws TrainingError naming the first group with a non-finite gradient,
/// before anything is modified.
void adam_step(ModelState& state, const Parameters& grads, double lr,
               const GroupFilter& trainable = {}, const AdamHyper& hyper = {});

/// Stage-1 groups: batch-norm affine and the FC layer.
bool stage1_trainable(const std::string& group);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  int stage = 1;
  double loss = 0.0;      // sample-weighted mean batch loss
  double acc = 0.0;       // training-mode batch predictions
  double theta = 0.0;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

NetworkConfig network_config(const TrainConfig& cfg, std::size_t input_cols);

/// Stage 1 (epochs 1..stage1_epochs) updates only stage1_trainable groups at
/// lr_stage1; stage 2 updates everything at lr_stage2. Batches come from a
/// seeded shuffle each epoch; a trailing batch of one sample is skipped.
TrainResult two_stage_train(const TrainConfig& cfg, const Dataset& train,
                            const EpochCallback& on_epoch = {});

/// Predicted labels in inference mode.
std::vector<int> predict(const ModelState& state, const Dataset& data);
double evaluate(const ModelState& state, const Dataset& data);

// ---------------------------------------------------------------------------
// Synthetic data

enum class DatasetVariant { Covariance, HigherOrder };

DatasetVariant parse_dataset_variant(const std::string& s);
std::string to_string(DatasetVariant v);

struct DatasetSpec {
  std::size_t num_classes = 2;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t dim = 8;     // d
  std::size_t count = 64;  // n
  DatasetVariant variant = DatasetVariant::Covariance;
  std::uint64_t seed = 1;
  double spectrum_ratio = 30.0;  // higher-order: largest/smallest eigenvalue

  void validate() const;
};

struct GeneratorReport {
  std::size_t attempts = 0;
  std::uint64_t seed_used = 0;
  double moment_gap = 0.0;  // ‖mean XXᵀ/n (class 0) − (class 1)‖_F / ‖class 0‖_F
  double kernel_gap = 0.0;  // same for the mean Gaussian kernel matrix
  double kernel_theta = 0.0;
  bool checks_passed = true;
};

struct SyntheticData {
  Dataset train;
  Dataset test;
  GeneratorReport report;
};

inline constexpr double kMaxMomentGap = 0.05;
inline constexpr double kMinKernelGap = 0.10;

/// Covariance variant: class k columns ~ N(0, Σ_k) with a seeded random SPD
/// Σ_k. Higher-order variant (two classes): every sample has covariance
/// F Λ Fᵀ for a fixed anisotropic Λ, with F Haar-random for class 0 and a
/// random signed permutation for class 1. Frames are shared by blocks of d
/// consecutive samples that cycle Λ through them, so each block's mean
/// covariance is exactly isotropic. The higher-order data is regenerated
/// with a derived seed (up to 5 attempts) until the moment and kernel checks
/// pass; the last attempt is returned either way.
SyntheticData generate_synthetic(const DatasetSpec& spec);

}  // namespace kspd
