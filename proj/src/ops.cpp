#include "selfens/ops.hpp"

#include "selfens/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace selfens {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T> using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Upper bound on the im2col buffer, in elements.
constexpr std::int64_t kColumnBudget = std::int64_t{1} << 23;

void require_rank(const Shape &shape, std::size_t rank, const char *op, const char *what) {
  if (shape.size() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(shape));
}

struct ConvGeometry {
  std::int64_t batch, in_channels, out_channels, height, width;
  std::int64_t plane() const { return height * width; }
  std::int64_t kernel_size() const { return in_channels * 9; }
};

/// Unfolds `count` samples into a [Cin*9, count*H*W] matrix, zero padded.
template <typename T>
void im2col(const T *input, std::int64_t count, const ConvGeometry &g, T *col) {
  const std::int64_t H = g.height, W = g.width, HW = g.plane();
  const std::int64_t N = count * HW;
  for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T *row = col + ((ci * 3 + ky) * 3 + kx) * N;
        const std::int64_t dy = ky - 1, dx = kx - 1;
        const std::int64_t x_lo = std::max<std::int64_t>(0, -dx);
        const std::int64_t x_hi = std::min<std::int64_t>(W, W - dx);
        for (std::int64_t s = 0; s < count; ++s) {
          const T *plane = input + (s * g.in_channels + ci) * HW;
          T *dst = row + s * HW;
          for (std::int64_t y = 0; y < H; ++y) {
            const std::int64_t iy = y + dy;
            T *out = dst + y * W;
            if (iy < 0 || iy >= H) {
              std::fill(out, out + W, T{0});
              continue;
            }
            const T *src = plane + iy * W;
            std::fill(out, out + x_lo, T{0});
            std::copy(src + x_lo + dx, src + x_hi + dx, out + x_lo);
            std::fill(out + x_hi, out + W, T{0});
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates the column matrix back into the input.
template <typename T>
void col2im_add(const T *col, std::int64_t count, const ConvGeometry &g, T *input_grad) {
  const std::int64_t H = g.height, W = g.width, HW = g.plane();
  const std::int64_t N = count * HW;
  for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T *row = col + ((ci * 3 + ky) * 3 + kx) * N;
        const std::int64_t dy = ky - 1, dx = kx - 1;
        const std::int64_t x_lo = std::max<std::int64_t>(0, -dx);
        const std::int64_t x_hi = std::min<std::int64_t>(W, W - dx);
        for (std::int64_t s = 0; s < count; ++s) {
          T *plane = input_grad + (s * g.in_channels + ci) * HW;
          const T *src = row + s * HW;
          for (std::int64_t y = 0; y < H; ++y) {
            const std::int64_t iy = y + dy;
            if (iy < 0 || iy >= H)
              continue;
            T *dst = plane + iy * W + dx;
            const T *in = src + y * W;
            for (std::int64_t x = x_lo; x < x_hi; ++x)
              dst[x] += in[x];
          }
        }
      }
    }
  }
}

std::int64_t chunk_size(const ConvGeometry &g) {
  const std::int64_t per_sample = g.kernel_size() * g.plane();
  return std::clamp<std::int64_t>(kColumnBudget / std::max<std::int64_t>(per_sample, 1), 1,
                                  g.batch);
}

template <typename T> void require_same_shape(const BasicTensor<T> &a, const BasicTensor<T> &b,
                                              const char *op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
}

} // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T> &input, const BasicTensor<T> &weight) {
  require_rank(input.shape(), 4, "conv2d", "input");
  require_rank(weight.shape(), 4, "conv2d", "weight");
  if (weight.dim(2) != 3 || weight.dim(3) != 3 || weight.dim(1) != input.dim(1))
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) +
                     " does not fit input " + to_string(input.shape()) +
                     " (expected [Cout, " + std::to_string(input.dim(1)) + ", 3, 3])");

  const ConvGeometry g{input.dim(0), input.dim(1), weight.dim(0), input.dim(2), input.dim(3)};
  const std::int64_t HW = g.plane(), K = g.kernel_size(), Cout = g.out_channels;
  const std::int64_t chunk = chunk_size(g);

  std::vector<T> out(static_cast<std::size_t>(g.batch * Cout * HW));
  std::vector<T> col(static_cast<std::size_t>(K * chunk * HW));
  std::vector<T> tmp(static_cast<std::size_t>(Cout * chunk * HW));
  ConstMatrixMap<T> w(weight.data().data(), Cout, K);
  const T *x = input.data().data();

  for (std::int64_t s0 = 0; s0 < g.batch; s0 += chunk) {
    const std::int64_t count = std::min(chunk, g.batch - s0);
    const std::int64_t N = count * HW;
    im2col(x + s0 * g.in_channels * HW, count, g, col.data());
    MatrixMap<T> result(tmp.data(), Cout, N);
    result.noalias() = w * ConstMatrixMap<T>(col.data(), K, N);
    for (std::int64_t s = 0; s < count; ++s)
      for (std::int64_t co = 0; co < Cout; ++co)
        std::memcpy(out.data() + ((s0 + s) * Cout + co) * HW, tmp.data() + co * N + s * HW,
                    sizeof(T) * HW);
  }

  Shape shape{g.batch, Cout, g.height, g.width};
  return BasicTensor<T>::make_result(
      "conv2d", std::move(shape), std::move(out), {input, weight},
      [input, weight, g, chunk](std::span<const T> gout, const std::vector<T *> &gin) {
        const std::int64_t HW = g.plane(), K = g.kernel_size(), Cout = g.out_channels;
        std::vector<T> col(static_cast<std::size_t>(K * chunk * HW));
        std::vector<T> grad_chunk(static_cast<std::size_t>(Cout * chunk * HW));
        std::vector<T> dcol;
        if (gin[0])
          dcol.resize(col.size());
        ConstMatrixMap<T> w(weight.data().data(), Cout, K);
        const T *x = input.data().data();
        for (std::int64_t s0 = 0; s0 < g.batch; s0 += chunk) {
          const std::int64_t count = std::min(chunk, g.batch - s0);
          const std::int64_t N = count * HW;
          for (std::int64_t s = 0; s < count; ++s)
            for (std::int64_t co = 0; co < Cout; ++co)
              std::memcpy(grad_chunk.data() + co * N + s * HW,
                          gout.data() + ((s0 + s) * Cout + co) * HW, sizeof(T) * HW);
          ConstMatrixMap<T> dy(grad_chunk.data(), Cout, N);
          if (gin[1]) {
            im2col(x + s0 * g.in_channels * HW, count, g, col.data());
            MatrixMap<T> dw(gin[1], Cout, K);
            dw.noalias() += dy * ConstMatrixMap<T>(col.data(), K, N).transpose();
          }
          if (gin[0]) {
            MatrixMap<T> dc(dcol.data(), K, N);
            dc.noalias() = w.transpose() * dy;
            col2im_add(dcol.data(), count, g, gin[0] + s0 * g.in_channels * HW);
          }
        }
      });
}

namespace {

template <typename T> struct ChannelView {
  std::int64_t batch, channels, plane;
  explicit ChannelView(const Shape &s)
      : batch(s[0]), channels(s[1]), plane(s.size() == 4 ? s[2] * s[3] : 1) {}
};

template <typename T>
void check_bn_shapes(const BasicTensor<T> &input, const BasicTensor<T> &gamma,
                     const BasicTensor<T> &beta, const BatchNormStats<T> &stats) {
  if (input.rank() != 4 && input.rank() != 2)
    throw ShapeError("batch_norm: input must be [B,C,H,W] or [B,C], got " +
                     to_string(input.shape()));
  const auto C = input.dim(1);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("batch_norm: gamma " + to_string(gamma.shape()) + " / beta " +
                     to_string(beta.shape()) + " do not match " + std::to_string(C) +
                     " channels");
  if (static_cast<std::int64_t>(stats.running_mean.size()) != C ||
      static_cast<std::int64_t>(stats.running_var.size()) != C)
    throw ShapeError("batch_norm: running statistics do not match " + std::to_string(C) +
                     " channels");
}

/// Shared affine tail: out = gamma * xhat + beta, with the matching backward.
template <typename T>
BasicTensor<T> normalized_affine(const char *op, const BasicTensor<T> &input,
                                 const BasicTensor<T> &gamma, const BasicTensor<T> &beta,
                                 std::vector<T> xhat, std::vector<T> rstd, bool batch_stats) {
  const ChannelView<T> v(input.shape());
  std::vector<T> out(xhat.size());
  const T *gm = gamma.data().data();
  const T *bt = beta.data().data();
  for (std::int64_t b = 0; b < v.batch; ++b)
    for (std::int64_t c = 0; c < v.channels; ++c) {
      const std::int64_t base = (b * v.channels + c) * v.plane;
      for (std::int64_t i = 0; i < v.plane; ++i)
        out[base + i] = gm[c] * xhat[base + i] + bt[c];
    }
  auto saved = std::make_shared<std::vector<T>>(std::move(xhat));
  return BasicTensor<T>::make_result(
      op, input.shape(), std::move(out), {input, gamma, beta},
      [v, gamma, saved, rstd = std::move(rstd), batch_stats](std::span<const T> gout,
                                                             const std::vector<T *> &gin) {
        const auto &xh = *saved;
        const T *gm = gamma.data().data();
        const double n = static_cast<double>(v.batch * v.plane);
        for (std::int64_t c = 0; c < v.channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t b = 0; b < v.batch; ++b) {
            const std::int64_t base = (b * v.channels + c) * v.plane;
            for (std::int64_t i = 0; i < v.plane; ++i) {
              sum_dy += gout[base + i];
              sum_dy_xhat += static_cast<double>(gout[base + i]) * xh[base + i];
            }
          }
          if (gin[1])
            gin[1][c] += static_cast<T>(sum_dy_xhat);
          if (gin[2])
            gin[2][c] += static_cast<T>(sum_dy);
          if (!gin[0])
            continue;
          if (batch_stats) {
            const double k = static_cast<double>(gm[c]) * rstd[c] / n;
            for (std::int64_t b = 0; b < v.batch; ++b) {
              const std::int64_t base = (b * v.channels + c) * v.plane;
              for (std::int64_t i = 0; i < v.plane; ++i)
                gin[0][base + i] += static_cast<T>(
                    k * (n * gout[base + i] - sum_dy - xh[base + i] * sum_dy_xhat));
            }
          } else {
            const T k = gm[c] * rstd[c];
            for (std::int64_t b = 0; b < v.batch; ++b) {
              const std::int64_t base = (b * v.channels + c) * v.plane;
              for (std::int64_t i = 0; i < v.plane; ++i)
                gin[0][base + i] += k * gout[base + i];
            }
          }
        }
      });
}

} // namespace

template <typename T>
BasicTensor<T> batch_norm_train(const BasicTensor<T> &input, const BasicTensor<T> &gamma,
                                const BasicTensor<T> &beta, BatchNormStats<T> &stats,
                                const BatchNormOptions &options) {
  check_bn_shapes(input, gamma, beta, stats);
  const ChannelView<T> v(input.shape());
  const std::int64_t n = v.batch * v.plane;
  if (n < 2)
    throw ShapeError("batch_norm: train mode needs at least 2 values per channel, input is " +
                     to_string(input.shape()));
  const T *x = input.data().data();
  std::vector<T> xhat(input.data().size());
  std::vector<T> rstd(static_cast<std::size_t>(v.channels));
  for (std::int64_t c = 0; c < v.channels; ++c) {
    double total = 0.0;
    for (std::int64_t b = 0; b < v.batch; ++b) {
      const T *p = x + (b * v.channels + c) * v.plane;
      for (std::int64_t i = 0; i < v.plane; ++i)
        total += p[i];
    }
    const double mu = total / static_cast<double>(n);
    double sq = 0.0;
    for (std::int64_t b = 0; b < v.batch; ++b) {
      const T *p = x + (b * v.channels + c) * v.plane;
      for (std::int64_t i = 0; i < v.plane; ++i) {
        const double d = p[i] - mu;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + options.epsilon);
    rstd[c] = static_cast<T>(r);
    for (std::int64_t b = 0; b < v.batch; ++b) {
      const std::int64_t base = (b * v.channels + c) * v.plane;
      for (std::int64_t i = 0; i < v.plane; ++i)
        xhat[base + i] = static_cast<T>((x[base + i] - mu) * r);
    }
    const double unbiased = sq / static_cast<double>(n - 1);
    const double m = options.momentum;
    stats.running_mean[c] = static_cast<T>((1.0 - m) * stats.running_mean[c] + m * mu);
    stats.running_var[c] = static_cast<T>((1.0 - m) * stats.running_var[c] + m * unbiased);
  }
  return normalized_affine("batch_norm", input, gamma, beta, std::move(xhat), std::move(rstd),
                           true);
}

template <typename T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T> &input, const BasicTensor<T> &gamma,
                               const BasicTensor<T> &beta, const BatchNormStats<T> &stats,
                               const BatchNormOptions &options) {
  check_bn_shapes(input, gamma, beta, stats);
  const ChannelView<T> v(input.shape());
  const T *x = input.data().data();
  std::vector<T> xhat(input.data().size());
  std::vector<T> rstd(static_cast<std::size_t>(v.channels));
  for (std::int64_t c = 0; c < v.channels; ++c) {
    const double r = 1.0 / std::sqrt(static_cast<double>(stats.running_var[c]) + options.epsilon);
    rstd[c] = static_cast<T>(r);
    const double mu = stats.running_mean[c];
    for (std::int64_t b = 0; b < v.batch; ++b) {
      const std::int64_t base = (b * v.channels + c) * v.plane;
      for (std::int64_t i = 0; i < v.plane; ++i)
        xhat[base + i] = static_cast<T>((x[base + i] - mu) * r);
    }
  }
  return normalized_affine("batch_norm_eval", input, gamma, beta, std::move(xhat),
                           std::move(rstd), false);
}

template <typename T> BasicTensor<T> relu(const BasicTensor<T> &input) {
  auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = x[i] > T{0} ? x[i] : T{0};
  return BasicTensor<T>::make_result(
      "relu", input.shape(), std::move(out), {input},
      [input](std::span<const T> gout, const std::vector<T *> &gin) {
        auto x = input.data();
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x[i] > T{0})
            gin[0][i] += gout[i];
      });
}

template <typename T> BasicTensor<T> max_pool2(const BasicTensor<T> &input) {
  require_rank(input.shape(), 4, "max_pool2", "input");
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("max_pool2: spatial size must be even, got " + to_string(input.shape()));
  const std::int64_t Ho = H / 2, Wo = W / 2;
  const T *x = input.data().data();
  std::vector<T> out(static_cast<std::size_t>(B * C * Ho * Wo));
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.size());
  for (std::int64_t p = 0; p < B * C; ++p) {
    const T *plane = x + p * H * W;
    for (std::int64_t y = 0; y < Ho; ++y)
      for (std::int64_t xo = 0; xo < Wo; ++xo) {
        const std::int64_t top = (2 * y) * W + 2 * xo;
        const std::int64_t cand[4] = {top, top + 1, top + W, top + W + 1};
        std::int64_t best = cand[0];
        for (int k = 1; k < 4; ++k)
          if (plane[cand[k]] > plane[best])
            best = cand[k];
        const std::int64_t o = (p * Ho + y) * Wo + xo;
        out[o] = plane[best];
        (*argmax)[o] = static_cast<std::int32_t>(best);
      }
  }
  Shape shape{B, C, Ho, Wo};
  return BasicTensor<T>::make_result(
      "max_pool2", std::move(shape), std::move(out), {input},
      [argmax, H, W, Ho, Wo](std::span<const T> gout, const std::vector<T *> &gin) {
        const auto &idx = *argmax;
        const std::int64_t planes = static_cast<std::int64_t>(idx.size()) / (Ho * Wo);
        for (std::int64_t p = 0; p < planes; ++p)
          for (std::int64_t i = 0; i < Ho * Wo; ++i) {
            const std::int64_t o = p * Ho * Wo + i;
            gin[0][p * H * W + idx[o]] += gout[o];
          }
      });
}

template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T> &input) {
  require_rank(input.shape(), 4, "global_avg_pool", "input");
  const std::int64_t B = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  const T *x = input.data().data();
  std::vector<T> out(static_cast<std::size_t>(B * C));
  for (std::int64_t p = 0; p < B * C; ++p) {
    double total = 0.0;
    for (std::int64_t i = 0; i < HW; ++i)
      total += x[p * HW + i];
    out[p] = static_cast<T>(total / static_cast<double>(HW));
  }
  return BasicTensor<T>::make_result(
      "global_avg_pool", Shape{B, C}, std::move(out), {input},
      [HW](std::span<const T> gout, const std::vector<T *> &gin) {
        const T inv = T{1} / static_cast<T>(HW);
        for (std::size_t p = 0; p < gout.size(); ++p) {
          const T g = gout[p] * inv;
          T *dst = gin[0] + p * HW;
          for (std::int64_t i = 0; i < HW; ++i)
            dst[i] += g;
        }
      });
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T> &input, const BasicTensor<T> &weight) {
  require_rank(input.shape(), 2, "dense", "input");
  require_rank(weight.shape(), 2, "dense", "weight");
  if (input.dim(1) != weight.dim(0))
    throw ShapeError("dense: input " + to_string(input.shape()) + " and weight " +
                     to_string(weight.shape()) + " have mismatched inner dimensions");
  const std::int64_t B = input.dim(0), F = input.dim(1), K = weight.dim(1);
  std::vector<T> out(static_cast<std::size_t>(B * K));
  MatrixMap<T>(out.data(), B, K).noalias() =
      ConstMatrixMap<T>(input.data().data(), B, F) * ConstMatrixMap<T>(weight.data().data(), F, K);
  return BasicTensor<T>::make_result(
      "dense", Shape{B, K}, std::move(out), {input, weight},
      [input, weight, B, F, K](std::span<const T> gout, const std::vector<T *> &gin) {
        ConstMatrixMap<T> dy(gout.data(), B, K);
        if (gin[0])
          MatrixMap<T>(gin[0], B, F).noalias() +=
              dy * ConstMatrixMap<T>(weight.data().data(), F, K).transpose();
        if (gin[1])
          MatrixMap<T>(gin[1], F, K).noalias() +=
              ConstMatrixMap<T>(input.data().data(), B, F).transpose() * dy;
      });
}

template <typename T> BasicTensor<T> softmax(const BasicTensor<T> &logits) {
  require_rank(logits.shape(), 2, "softmax", "logits");
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  if (K < 2)
    throw ShapeError("softmax: needs at least 2 classes, got " + to_string(logits.shape()));
  const T *z = logits.data().data();
  std::vector<T> out(static_cast<std::size_t>(B * K));
  for (std::int64_t b = 0; b < B; ++b) {
    const T *row = z + b * K;
    const T top = *std::max_element(row, row + K);
    double total = 0.0;
    for (std::int64_t k = 0; k < K; ++k)
      total += std::exp(static_cast<double>(row[k] - top));
    for (std::int64_t k = 0; k < K; ++k)
      out[b * K + k] = static_cast<T>(std::exp(static_cast<double>(row[k] - top)) / total);
  }
  auto probs = std::make_shared<std::vector<T>>(out);
  return BasicTensor<T>::make_result(
      "softmax", logits.shape(), std::move(out), {logits},
      [probs, B, K](std::span<const T> gout, const std::vector<T *> &gin) {
        const auto &y = *probs;
        for (std::int64_t b = 0; b < B; ++b) {
          double dot = 0.0;
          for (std::int64_t k = 0; k < K; ++k)
            dot += static_cast<double>(gout[b * K + k]) * y[b * K + k];
          for (std::int64_t k = 0; k < K; ++k)
            gin[0][b * K + k] += static_cast<T>(y[b * K + k] * (gout[b * K + k] - dot));
        }
      });
}

template <typename T> BasicTensor<T> add(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.data().begin(), a.data().end());
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] += y[i];
  return BasicTensor<T>::make_result(
      "add", a.shape(), std::move(out), {a, b},
      [](std::span<const T> gout, const std::vector<T *> &gin) {
        for (int k = 0; k < 2; ++k)
          if (gin[k])
            for (std::size_t i = 0; i < gout.size(); ++i)
              gin[k][i] += gout[i];
      });
}

template <typename T> BasicTensor<T> mul(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[i] * y[i];
  return BasicTensor<T>::make_result(
      "mul", a.shape(), std::move(out), {a, b},
      [a, b](std::span<const T> gout, const std::vector<T *> &gin) {
        auto x = a.data(), y = b.data();
        for (std::size_t i = 0; i < gout.size(); ++i) {
          if (gin[0])
            gin[0][i] += gout[i] * y[i];
          if (gin[1])
            gin[1][i] += gout[i] * x[i];
        }
      });
}

template <typename T> BasicTensor<T> scale(const BasicTensor<T> &a, double factor) {
  auto x = a.data();
  const T f = static_cast<T>(factor);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[i] * f;
  return BasicTensor<T>::make_result(
      "scale", a.shape(), std::move(out), {a},
      [f](std::span<const T> gout, const std::vector<T *> &gin) {
        for (std::size_t i = 0; i < gout.size(); ++i)
          gin[0][i] += gout[i] * f;
      });
}

template <typename T> BasicTensor<T> square(const BasicTensor<T> &a) { return mul(a, a); }

template <typename T> BasicTensor<T> sum(const BasicTensor<T> &a) {
  double total = 0.0;
  for (T v : a.data())
    total += v;
  const auto n = static_cast<std::size_t>(a.numel());
  return BasicTensor<T>::make_result(
      "sum", Shape{}, {static_cast<T>(total)}, {a},
      [n](std::span<const T> gout, const std::vector<T *> &gin) {
        for (std::size_t i = 0; i < n; ++i)
          gin[0][i] += gout[0];
      });
}

template <typename T> BasicTensor<T> mean(const BasicTensor<T> &a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

#define SELFENS_INSTANTIATE(T)                                                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T> &, const BasicTensor<T> &);               \
  template BasicTensor<T> batch_norm_train(const BasicTensor<T> &, const BasicTensor<T> &,      \
                                           const BasicTensor<T> &, BatchNormStats<T> &,         \
                                           const BatchNormOptions &);                           \
  template BasicTensor<T> batch_norm_eval(const BasicTensor<T> &, const BasicTensor<T> &,       \
                                          const BasicTensor<T> &, const BatchNormStats<T> &,    \
                                          const BatchNormOptions &);                            \
  template BasicTensor<T> relu(const BasicTensor<T> &);                                         \
  template BasicTensor<T> max_pool2(const BasicTensor<T> &);                                    \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T> &);                              \
  template BasicTensor<T> dense(const BasicTensor<T> &, const BasicTensor<T> &);                \
  template BasicTensor<T> softmax(const BasicTensor<T> &);                                      \
  template BasicTensor<T> add(const BasicTensor<T> &, const BasicTensor<T> &);                  \
  template BasicTensor<T> mul(const BasicTensor<T> &, const BasicTensor<T> &);                  \
  template BasicTensor<T> scale(const BasicTensor<T> &, double);                                \
  template BasicTensor<T> square(const BasicTensor<T> &);                                       \
  template BasicTensor<T> sum(const BasicTensor<T> &);                                          \
  template BasicTensor<T> mean(const BasicTensor<T> &);

SELFENS_INSTANTIATE(float)
SELFENS_INSTANTIATE(double)

#undef SELFENS_INSTANTIATE

} // namespace selfens
