#include "selfens/network.hpp"

#include "selfens/errors.hpp"
#include "selfens/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace selfens {

std::string to_string(LayerKind kind) {
  switch (kind) {
  case LayerKind::conv:
    return "conv";
  case LayerKind::bn_relu_conv:
    return "bn_relu_conv";
  case LayerKind::maxpool:
    return "maxpool";
  case LayerKind::global_avg_pool:
    return "global_avg_pool";
  case LayerKind::dense:
    return "dense";
  }
  return "unknown";
}

std::vector<LayerSpec> canonical_layers(int num_classes) {
  if (num_classes < 2)
    throw UsageError("num_classes must be at least 2, got " + std::to_string(num_classes));
  using K = LayerKind;
  return {
      {K::conv, 1, 32, 1},
      {K::bn_relu_conv, 32, 32, 1},
      {K::maxpool, 32, 32, 1},
      {K::bn_relu_conv, 32, 64, 2},
      {K::maxpool, 64, 64, 1},
      {K::bn_relu_conv, 64, 128, 2},
      {K::maxpool, 128, 128, 1},
      {K::bn_relu_conv, 128, 128, 2},
      {K::maxpool, 128, 128, 1},
      {K::bn_relu_conv, 128, 128, 2},
      {K::global_avg_pool, 128, 128, 1},
      {K::dense, 128, num_classes, 1},
  };
}

std::vector<LayerSpec> tiny_layers(int num_classes, int width) {
  if (num_classes < 2)
    throw UsageError("num_classes must be at least 2, got " + std::to_string(num_classes));
  using K = LayerKind;
  return {
      {K::conv, 1, width, 1},
      {K::bn_relu_conv, width, width, 1},
      {K::maxpool, width, width, 1},
      {K::global_avg_pool, width, width, 1},
      {K::dense, width, num_classes, 1},
  };
}

std::int64_t parameter_count(const LayerSpec &spec) {
  const std::int64_t in = spec.in_channels, out = spec.out_channels;
  switch (spec.kind) {
  case LayerKind::conv:
    return out * in * 9;
  case LayerKind::bn_relu_conv: {
    std::int64_t total = 2 * in + out * in * 9;
    total += (spec.repeat - 1) * (2 * out + out * out * 9);
    return total;
  }
  case LayerKind::dense:
    return in * out;
  case LayerKind::maxpool:
  case LayerKind::global_avg_pool:
    return 0;
  }
  return 0;
}

std::string describe(const LayerSpec &spec) {
  switch (spec.kind) {
  case LayerKind::conv:
    return "Conv 3x3, " + std::to_string(spec.out_channels) + " filters";
  case LayerKind::bn_relu_conv:
    return "[BN, ReLU, Conv 3x3, " + std::to_string(spec.out_channels) + " filters] x " +
           std::to_string(spec.repeat);
  case LayerKind::maxpool:
    return "MaxPool 2x2";
  case LayerKind::global_avg_pool:
    return "Global AvgPool";
  case LayerKind::dense:
    return "Dense Layer";
  }
  return "?";
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(const void *data, std::size_t size, std::uint64_t h = kFnvOffset) {
  const auto *p = static_cast<const unsigned char *>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

} // namespace

std::uint64_t fingerprint(const std::vector<LayerSpec> &layers) {
  std::ostringstream text;
  for (const auto &l : layers)
    text << to_string(l.kind) << ':' << l.in_channels << ':' << l.out_channels << ':' << l.repeat
         << ';';
  const auto s = text.str();
  return fnv1a(s.data(), s.size());
}

template <typename T>
Network<T>::Network(std::vector<LayerSpec> layers, std::uint64_t seed, BatchNormOptions bn)
    : layers_(std::move(layers)), bn_options_(bn) {
  const Rng root(seed);
  auto add_weight = [&](std::string name, Shape shape, std::int64_t fan_in) {
    Rng rng = root.split(params_.size());
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    BasicTensor<T> w(shape);
    for (auto &v : w.mutable_data())
      v = static_cast<T>(rng.uniform(-bound, bound));
    w.set_requires_grad(true);
    params_.push_back({std::move(name), std::move(w)});
  };
  auto add_bn = [&](const std::string &prefix, int channels) {
    params_.push_back(
        {prefix + ".gamma", BasicTensor<T>::full(Shape{channels}, T{1}).set_requires_grad(true)});
    params_.push_back(
        {prefix + ".beta", BasicTensor<T>::zeros(Shape{channels}).set_requires_grad(true)});
    stats_.emplace_back(static_cast<std::size_t>(channels));
  };

  int channels = layers_.empty() ? 1 : layers_.front().in_channels;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto &l = layers_[i];
    const std::string prefix = "L" + std::to_string(i);
    if (l.in_channels != channels)
      throw UsageError("layer " + std::to_string(i) + " (" + describe(l) + ") expects " +
                       std::to_string(l.in_channels) + " input channels, previous layer gives " +
                       std::to_string(channels));
    if (l.in_channels <= 0 || l.out_channels <= 0 || l.repeat < 1)
      throw UsageError("layer " + std::to_string(i) + " has invalid channel counts");
    switch (l.kind) {
    case LayerKind::conv:
      add_weight(prefix + ".conv.weight", Shape{l.out_channels, l.in_channels, 3, 3},
                 std::int64_t{l.in_channels} * 9);
      channels = l.out_channels;
      break;
    case LayerKind::bn_relu_conv:
      for (int r = 0; r < l.repeat; ++r) {
        const int cin = r == 0 ? l.in_channels : l.out_channels;
        const std::string unit = prefix + "." + std::to_string(r);
        add_bn(unit + ".bn", cin);
        add_weight(unit + ".conv.weight", Shape{l.out_channels, cin, 3, 3},
                   std::int64_t{cin} * 9);
      }
      channels = l.out_channels;
      break;
    case LayerKind::maxpool:
    case LayerKind::global_avg_pool:
      if (l.out_channels != l.in_channels)
        throw UsageError("pooling layer " + std::to_string(i) + " cannot change channel count");
      break;
    case LayerKind::dense:
      add_weight(prefix + ".dense.weight", Shape{l.in_channels, l.out_channels}, l.in_channels);
      channels = l.out_channels;
      break;
    }
  }
}

template <typename T>
Network<T>::Network(const Network &other)
    : metadata(other.metadata), layers_(other.layers_), bn_options_(other.bn_options_),
      stats_(other.stats_) {
  params_.reserve(other.params_.size());
  for (const auto &p : other.params_) {
    auto copy = p.tensor.detach();
    copy.set_requires_grad(p.tensor.requires_grad());
    params_.push_back({p.name, std::move(copy)});
  }
}

template <typename T> Network<T> &Network<T>::operator=(const Network &other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T> int Network<T>::num_classes() const {
  if (layers_.empty() || layers_.back().kind != LayerKind::dense)
    return 0;
  return layers_.back().out_channels;
}

template <typename T> int Network<T>::pool_count() const {
  int n = 0;
  for (const auto &l : layers_)
    n += l.kind == LayerKind::maxpool;
  return n;
}

template <typename T> std::vector<BasicTensor<T>> Network<T>::parameter_tensors() const {
  std::vector<BasicTensor<T>> out;
  out.reserve(params_.size());
  for (const auto &p : params_)
    out.push_back(p.tensor);
  return out;
}

template <typename T> std::int64_t Network<T>::count_parameters() const {
  std::int64_t total = 0;
  for (const auto &p : params_)
    total += p.tensor.numel();
  return total;
}

template <typename T> std::vector<std::int64_t> Network<T>::segment_parameter_counts() const {
  std::vector<std::int64_t> counts;
  counts.reserve(layers_.size());
  for (const auto &l : layers_)
    counts.push_back(parameter_count(l));
  return counts;
}

template <typename T> void Network<T>::check_input(const BasicTensor<T> &batch) const {
  const auto &s = batch.shape();
  if (s.size() != 4)
    throw ShapeError("network input must be [batch, channels, height, width], got " +
                     to_string(s));
  const int channels = layers_.empty() ? 1 : layers_.front().in_channels;
  if (s[1] != channels)
    throw ShapeError("network input has " + std::to_string(s[1]) + " channels, expected " +
                     std::to_string(channels));
  const std::int64_t multiple = std::int64_t{1} << pool_count();
  if (s[2] % multiple != 0 || s[3] % multiple != 0)
    throw ShapeError("network input spatial size " + std::to_string(s[2]) + "x" +
                     std::to_string(s[3]) + " must be divisible by " + std::to_string(multiple));
}

template <typename T> std::vector<Shape> Network<T>::trace_shapes(const Shape &input) const {
  if (input.size() != 4)
    throw ShapeError("trace_shapes needs a [batch, channels, height, width] shape, got " +
                     to_string(input));
  std::vector<Shape> out;
  Shape s = input;
  for (const auto &l : layers_) {
    switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::bn_relu_conv:
      s = {s[0], l.out_channels, s[2], s[3]};
      break;
    case LayerKind::maxpool:
      if (s[2] % 2 || s[3] % 2)
        throw ShapeError("max pooling needs an even spatial size, got " + to_string(s));
      s = {s[0], s[1], s[2] / 2, s[3] / 2};
      break;
    case LayerKind::global_avg_pool:
      s = {s[0], s[1]};
      break;
    case LayerKind::dense:
      s = {s[0], l.out_channels};
      break;
    }
    out.push_back(s);
  }
  return out;
}

template <typename T>
BasicTensor<T> Network<T>::run(const BasicTensor<T> &batch, Mode mode,
                               std::vector<BatchNormStats<T>> *mutable_stats,
                               std::vector<Shape> *trace) const {
  check_input(batch);
  BasicTensor<T> x = batch;
  std::size_t p = 0, bn = 0;
  for (const auto &l : layers_) {
    switch (l.kind) {
    case LayerKind::conv:
      x = conv2d(x, params_[p++].tensor);
      break;
    case LayerKind::bn_relu_conv:
      for (int r = 0; r < l.repeat; ++r) {
        const auto &gamma = params_[p++].tensor;
        const auto &beta = params_[p++].tensor;
        if (mode == Mode::train)
          x = batch_norm_train(x, gamma, beta, (*mutable_stats)[bn], bn_options_);
        else
          x = batch_norm_eval(x, gamma, beta, stats_[bn], bn_options_);
        ++bn;
        x = relu(x);
        x = conv2d(x, params_[p++].tensor);
      }
      break;
    case LayerKind::maxpool:
      x = max_pool2(x);
      break;
    case LayerKind::global_avg_pool:
      x = global_avg_pool(x);
      break;
    case LayerKind::dense:
      x = dense(x, params_[p++].tensor);
      break;
    }
    if (trace)
      trace->push_back(x.shape());
  }
  return x;
}

template <typename T>
std::vector<Shape> Network<T>::forward_shapes(const BasicTensor<T> &batch) const {
  NoGradGuard guard;
  std::vector<Shape> trace;
  run(batch, Mode::eval, nullptr, &trace);
  return trace;
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T> &batch, Mode mode) {
  if (mode == Mode::train)
    return run(batch, mode, &stats_);
  return predict(batch);
}

template <typename T> BasicTensor<T> Network<T>::predict(const BasicTensor<T> &batch) const {
  NoGradGuard guard;
  return run(batch, Mode::eval, nullptr);
}

template <typename T> void Network<T>::zero_grad() {
  for (auto &p : params_)
    p.tensor.zero_grad();
}

template class Network<float>;
template class Network<double>;

Network<float> build_canonical(int num_classes, std::uint64_t seed) {
  return Network<float>(canonical_layers(num_classes), seed);
}

// Checkpoint serialization.

namespace {

constexpr char kMagic[8] = {'S', 'E', 'L', 'F', 'E', 'N', 'S', 'C'};
constexpr std::uint32_t kFormatVersion = 1;
// magic + version + total length
constexpr std::size_t kPrefixBytes = 8 + 4 + 8;

class Writer {
public:
  void bytes(const void *p, std::size_t n) {
    const auto *c = static_cast<const char *>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U> void le(U value) {
    static_assert(std::is_integral_v<U>);
    using V = std::make_unsigned_t<U>;
    auto v = static_cast<V>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i)
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string &s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char> &buffer() { return buf_; }

private:
  std::vector<char> buf_;
};

class Reader {
public:
  Reader(const std::vector<char> &buf, std::size_t limit) : buf_(buf), limit_(limit) {}

  template <typename U> U le(const char *field) {
    need(sizeof(U), field);
    using V = std::make_unsigned_t<U>;
    V v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<V>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float f32(const char *field) { return std::bit_cast<float>(le<std::uint32_t>(field)); }
  double f64(const char *field) { return std::bit_cast<double>(le<std::uint64_t>(field)); }
  std::string str(const char *field) {
    const auto n = le<std::uint32_t>(field);
    need(n, field);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

private:
  void need(std::size_t n, const char *field) const {
    if (pos_ + n > limit_)
      throw DataError(std::string("checkpoint field '") + field + "' runs past the end of data");
  }
  const std::vector<char> &buf_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

void write_array(Writer &w, const std::string &name, const Shape &shape,
                 std::span<const float> values) {
  w.str(name);
  w.le(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape)
    w.le(static_cast<std::int64_t>(d));
  for (float v : values)
    w.f32(v);
}

} // namespace

void save_checkpoint(const Network<float> &net, const std::filesystem::path &path) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.le(kFormatVersion);
  w.le(std::uint64_t{0}); // total length, patched below
  w.le(fingerprint(net.layers()));
  w.le(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto &l : net.layers()) {
    w.le(static_cast<std::uint8_t>(l.kind));
    w.le(static_cast<std::int32_t>(l.in_channels));
    w.le(static_cast<std::int32_t>(l.out_channels));
    w.le(static_cast<std::int32_t>(l.repeat));
  }
  w.f64(net.batch_norm_options().epsilon);
  w.f64(net.batch_norm_options().momentum);
  w.le(static_cast<std::uint32_t>(net.metadata.size()));
  for (const auto &[k, v] : net.metadata) {
    w.str(k);
    w.str(v);
  }

  const auto &stats = net.batch_norm_stats();
  w.le(static_cast<std::uint32_t>(net.parameters().size() + 2 * stats.size()));
  for (const auto &p : net.parameters())
    write_array(w, p.name, p.tensor.shape(), p.tensor.data());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const Shape s{static_cast<std::int64_t>(stats[i].running_mean.size())};
    write_array(w, "bn" + std::to_string(i) + ".running_mean", s, stats[i].running_mean);
    write_array(w, "bn" + std::to_string(i) + ".running_var", s, stats[i].running_var);
  }

  auto &buf = w.buffer();
  const std::uint64_t total = buf.size() + 8; // trailing checksum
  for (std::size_t i = 0; i < 8; ++i)
    buf[12 + i] = static_cast<char>((total >> (8 * i)) & 0xFF);
  w.le(fnv1a(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError("cannot open checkpoint for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out)
    throw DataError("failed writing checkpoint: " + path.string());
}

Network<float> load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open checkpoint: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < kPrefixBytes)
    throw DataError("checkpoint truncated: expected at least " + std::to_string(kPrefixBytes) +
                    " bytes, got " + std::to_string(buf.size()));
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint magic mismatch: not a selfens checkpoint");
  Reader prefix(buf, buf.size());
  prefix.le<std::uint64_t>("magic");
  const auto version = prefix.le<std::uint32_t>("version");
  if (version != kFormatVersion)
    throw DataError("checkpoint format version " + std::to_string(version) +
                    " unsupported (expected " + std::to_string(kFormatVersion) + ")");
  const auto total = prefix.le<std::uint64_t>("length");
  if (total != buf.size())
    throw DataError("checkpoint length mismatch: expected " + std::to_string(total) +
                    " bytes, got " + std::to_string(buf.size()));
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored_sum = 0;
  for (std::size_t i = 0; i < 8; ++i)
    stored_sum |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[body + i])) << (8 * i);
  if (stored_sum != fnv1a(buf.data(), body))
    throw DataError("checkpoint checksum mismatch: file is corrupt");

  Reader r(buf, body);
  r.le<std::uint64_t>("magic");
  r.le<std::uint32_t>("version");
  r.le<std::uint64_t>("length");
  const auto stored_fp = r.le<std::uint64_t>("fingerprint");
  const auto layer_count = r.le<std::uint32_t>("layer_count");
  std::vector<LayerSpec> layers;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec l;
    const auto kind = r.le<std::uint8_t>("layer.kind");
    if (kind > static_cast<std::uint8_t>(LayerKind::dense))
      throw DataError("checkpoint field 'layer.kind' has unknown value " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.in_channels = r.le<std::int32_t>("layer.in_channels");
    l.out_channels = r.le<std::int32_t>("layer.out_channels");
    l.repeat = r.le<std::int32_t>("layer.repeat");
    layers.push_back(l);
  }
  if (fingerprint(layers) != stored_fp)
    throw DataError("checkpoint field 'fingerprint' does not match the stored layer list");
  BatchNormOptions bn;
  bn.epsilon = r.f64("bn.epsilon");
  bn.momentum = r.f64("bn.momentum");

  Network<float> net(layers, 0, bn);
  const auto meta_count = r.le<std::uint32_t>("metadata_count");
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    auto k = r.str("metadata.key");
    net.metadata[k] = r.str("metadata.value");
  }

  auto &params = net.parameters();
  auto &stats = net.batch_norm_stats();
  const auto array_count = r.le<std::uint32_t>("array_count");
  if (array_count != params.size() + 2 * stats.size())
    throw DataError("checkpoint field 'array_count' is " + std::to_string(array_count) +
                    ", architecture needs " + std::to_string(params.size() + 2 * stats.size()));
  auto read_into = [&](const std::string &expected_name, const Shape &expected_shape,
                       std::span<float> dst) {
    const auto name = r.str("array.name");
    if (name != expected_name)
      throw DataError("checkpoint array '" + name + "' found where '" + expected_name +
                      "' was expected");
    const auto rank = r.le<std::uint32_t>("array.rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(r.le<std::int64_t>("array.dim"));
    if (shape != expected_shape)
      throw DataError("checkpoint array '" + name + "' has shape " + to_string(shape) +
                      ", expected " + to_string(expected_shape));
    for (auto &v : dst)
      v = r.f32(name.c_str());
  };
  for (auto &p : params)
    read_into(p.name, p.tensor.shape(), p.tensor.mutable_data());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const Shape s{static_cast<std::int64_t>(stats[i].running_mean.size())};
    read_into("bn" + std::to_string(i) + ".running_mean", s, stats[i].running_mean);
    read_into("bn" + std::to_string(i) + ".running_var", s, stats[i].running_var);
  }
  if (r.position() != body)
    throw DataError("checkpoint has " + std::to_string(body - r.position()) +
                    " unexpected trailing bytes");
  return net;
}

} // namespace selfens
