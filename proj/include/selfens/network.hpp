#pragma once

#include "selfens/ops.hpp"
#include "selfens/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace selfens {

enum class LayerKind : std::uint8_t {
  conv = 0,
  bn_relu_conv = 1,
  maxpool = 2,
  global_avg_pool = 3,
  dense = 4,
};

std::string to_string(LayerKind kind);

/// One row of an architecture table. A bn_relu_conv row repeats its
/// [BN, ReLU, conv3x3] unit `repeat` times; the first unit maps
/// in_channels -> out_channels and the rest out_channels -> out_channels.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int in_channels = 0;
  int out_channels = 0;
  int repeat = 1;

  friend bool operator==(const LayerSpec &, const LayerSpec &) = default;
};

/// The 877,728-parameter stack for two classes:
/// conv(1->32); [BN,ReLU,conv]x1 (32); pool; x2 (64); pool; x2 (128); pool;
/// x2 (128); pool; x2 (128); global average pool; dense(128->K).
std::vector<LayerSpec> canonical_layers(int num_classes);

/// Two-conv network for 64-bit gradient checks on 8x8 inputs.
std::vector<LayerSpec> tiny_layers(int num_classes, int width = 3);

/// Trainable parameter count of one row.
std::int64_t parameter_count(const LayerSpec &spec);

/// Human-readable row label, e.g. "[BN, ReLU, Conv 3x3, 64 filters] x 2".
std::string describe(const LayerSpec &spec);

/// FNV-1a hash of the layer list; identifies an architecture in checkpoints.
std::uint64_t fingerprint(const std::vector<LayerSpec> &layers);

template <typename T> struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

/// A layer stack with its parameters and batch-norm running statistics.
template <typename T> class Network {
public:
  Network() = default;
  /// Builds and initializes the stack: conv and dense weights uniform in
  /// +-sqrt(6 / fan_in), gamma 1, beta 0, running mean 0, running var 1.
  Network(std::vector<LayerSpec> layers, std::uint64_t seed, BatchNormOptions bn = {});

  // Copies are deep: parameters never share storage between networks.
  Network(const Network &other);
  Network &operator=(const Network &other);
  Network(Network &&) noexcept = default;
  Network &operator=(Network &&) noexcept = default;

  const std::vector<LayerSpec> &layers() const { return layers_; }
  const BatchNormOptions &batch_norm_options() const { return bn_options_; }
  int num_classes() const;
  /// Number of 2x pooling stages; input sides must be multiples of 2^pools.
  int pool_count() const;

  std::vector<NamedTensor<T>> &parameters() { return params_; }
  const std::vector<NamedTensor<T>> &parameters() const { return params_; }
  std::vector<BasicTensor<T>> parameter_tensors() const;

  std::vector<BatchNormStats<T>> &batch_norm_stats() { return stats_; }
  const std::vector<BatchNormStats<T>> &batch_norm_stats() const { return stats_; }

  std::int64_t count_parameters() const;
  /// One entry per LayerSpec; pooling rows count 0.
  std::vector<std::int64_t> segment_parameter_counts() const;
  /// Output shape after every LayerSpec for a [batch, 1, height, width] input.
  std::vector<Shape> trace_shapes(const Shape &input) const;
  /// Same, observed on an actual eval-mode forward of `batch`.
  std::vector<Shape> forward_shapes(const BasicTensor<T> &batch) const;

  /// Train mode records the graph and updates running statistics. Eval mode
  /// does neither.
  BasicTensor<T> forward(const BasicTensor<T> &batch, Mode mode);
  /// Eval-mode forward; safe to call concurrently on a shared network.
  BasicTensor<T> predict(const BasicTensor<T> &batch) const;

  void zero_grad();

  /// Free-form key/value pairs carried through checkpoints (input geometry,
  /// class names).
  std::map<std::string, std::string> metadata;

private:
  void check_input(const BasicTensor<T> &batch) const;
  BasicTensor<T> run(const BasicTensor<T> &batch, Mode mode,
                     std::vector<BatchNormStats<T>> *mutable_stats,
                     std::vector<Shape> *trace = nullptr) const;

  std::vector<LayerSpec> layers_;
  BatchNormOptions bn_options_;
  std::vector<NamedTensor<T>> params_;
  std::vector<BatchNormStats<T>> stats_;
};

Network<float> build_canonical(int num_classes, std::uint64_t seed);

template <typename T> std::int64_t count_parameters(const Network<T> &net) {
  return net.count_parameters();
}

/// Writes a versioned little-endian checkpoint: magic, version, total byte
/// length, architecture fingerprint and layer list, metadata, then every
/// parameter and running statistic as float32 with its shape.
void save_checkpoint(const Network<float> &net, const std::filesystem::path &path);
Network<float> load_checkpoint(const std::filesystem::path &path);

extern template class Network<float>;
extern template class Network<double>;

} // namespace selfens
