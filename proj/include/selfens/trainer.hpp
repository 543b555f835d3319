#pragma once

#include "selfens/datastore.hpp"
#include "selfens/metrics.hpp"
#include "selfens/network.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace selfens {

enum class ConsistencyTarget { probabilities, logits };
enum class StepMode { combined, alternating };

/// Training settings. On disk as `key = value` lines (see to_text for the
/// key list); `#` starts a comment.
struct TrainConfig {
  std::string task = "gender";
  double alpha = 1.0;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int epochs = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  ConsistencyTarget consistency_target = ConsistencyTarget::probabilities;
  StepMode step_mode = StepMode::combined;
  /// Linear ramp of alpha from 0 over this many epochs; 0 disables it.
  int alpha_rampup_epochs = 0;
  /// Evaluate on the plan's test set after every epoch.
  bool eval_each_epoch = true;
  /// Apply the training augmentation to labeled images as well.
  bool augment_labeled = true;
  bool ordinal = false;
  int crop_size = 128;
  int source_size = 144;
  double brightness_delta = 0.2;
  double saturation_min = 0.5;
  double saturation_max = 1.5;
  double hflip_probability = 0.5;
  bool random_crop = true;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  /// gender: batch 32, lr 1e-3, 50 epochs. age: batch 64, lr 1e-4,
  /// 200 epochs, ordinal.
  static TrainConfig preset(const std::string &task);

  AugmentSpec augment_spec() const;
  BatchNormOptions batch_norm_options() const;
  /// Alpha in effect during a zero-based epoch.
  double alpha_at(int epoch) const;
  void validate() const;

  friend bool operator==(const TrainConfig &, const TrainConfig &) = default;
};

/// Sets one key; unknown keys and malformed values throw UsageError.
void apply_setting(TrainConfig &cfg, const std::string &key, const std::string &value);
/// Parses config text. A `task` line applies its preset before the other
/// keys regardless of where it appears.
TrainConfig parse_config(const std::string &text, const std::string &origin = "config");
TrainConfig load_config(const std::filesystem::path &path);
/// Every key, one per line, in a fixed order; parse_config round-trips it.
std::string to_text(const TrainConfig &cfg);

/// Mean over the batch of -sum_k t log(max(p, 1e-12)).
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T> &targets, const BasicTensor<T> &probs);
/// Mean of squared differences over all B*K entries; gradient reaches both
/// arguments.
template <typename T>
BasicTensor<T> consistency_mse(const BasicTensor<T> &z1, const BasicTensor<T> &z2);

template <typename T> struct JointLoss {
  BasicTensor<T> total;
  BasicTensor<T> supervised;
  /// Undefined when the unlabeled forwards were skipped.
  BasicTensor<T> consistency;
};

/// total = CE(labeled) + alpha * MSE(view predictions). Runs the network in
/// train mode: labeled batch first, then each view. With alpha == 0 or no
/// views the unlabeled forwards are skipped entirely.
template <typename T>
JointLoss<T> joint_loss(Network<T> &net, const BasicTensor<T> &images,
                        const BasicTensor<T> &targets, const BasicTensor<T> *first,
                        const BasicTensor<T> *second, double alpha, ConsistencyTarget target);

JointLoss<float> joint_loss(Network<float> &net, const LabeledBatch &labeled,
                            const UnlabeledBatch *unlabeled, const TrainConfig &cfg,
                            double alpha);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T> struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;
};

/// Bias-corrected Adam update of every parameter from its accumulated grad.
/// A non-finite gradient throws NumericError before anything is modified.
/// Parameters without a grad count as zero-gradient.
template <typename T>
void adam_step(std::vector<NamedTensor<T>> &params, AdamState<T> &state, const AdamOptions &opt);

struct EpochLog {
  int epoch = 0;
  double alpha = 0.0;
  std::size_t steps = 0;
  double sup_loss = 0.0;
  /// NaN when no consistency term was computed.
  double cons_loss = 0.0;
  double total_loss = 0.0;
  std::optional<MetricsReport> eval;
};

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochLog &log);

struct FitOptions {
  /// When set: epochs.csv, best.ckpt and final.ckpt are written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochLog &)> on_epoch;
  int threads = 0;
};

struct FitResult {
  Network<float> final;
  Network<float> best;
  int best_epoch = -1;
  std::vector<EpochLog> epochs;
};

/// Trains a fresh canonical network for cfg.epochs. The best network is the
/// one with the highest test accuracy (first wins on ties); without
/// per-epoch evaluation it is the final one.
FitResult fit(const Manifest &manifest, const SplitPlan &plan, const TrainConfig &cfg,
              const FitOptions &options = {});

/// Canonical network for the config's geometry, initialized from cfg.seed.
Network<float> initial_network(const TrainConfig &cfg, const Manifest &manifest);

} // namespace selfens
