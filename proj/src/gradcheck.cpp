#include "selfens/gradcheck.hpp"

#include "selfens/errors.hpp"
#include "selfens/network.hpp"
#include "selfens/ops.hpp"
#include "selfens/rng.hpp"
#include "selfens/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace selfens {

namespace {

constexpr double kKinkRatio = 1e-4;
constexpr double kKinkFloor = 1e-9;

using Inputs = std::vector<Tensor64>;
using OpFn = std::function<Tensor64(const Inputs &)>;

struct Arg {
  Shape shape;
  std::vector<double> values;
  bool differentiable = true;
};

std::vector<double> uniform_values(const Shape &shape, Rng &rng, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto &x : v)
    x = rng.uniform(lo, hi);
  return v;
}

/// Magnitudes in [0.1, 1] with random sign: no ReLU argument near the kink.
std::vector<double> away_from_zero(const Shape &shape, Rng &rng) {
  auto v = uniform_values(shape, rng, 0.1, 1.0);
  for (auto &x : v)
    if (rng.bernoulli(0.5))
      x = -x;
  return v;
}

/// Distinct values 0.01 apart in random order: no max-pool ties.
std::vector<double> distinct_values(const Shape &shape, Rng &rng) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  std::iota(v.begin(), v.end(), 0.0);
  shuffle(v.begin(), v.end(), rng);
  for (auto &x : v)
    x = 0.01 * x - 0.5;
  return v;
}

double norm(const std::vector<double> &v) {
  double s = 0.0;
  for (double x : v)
    s += x * x;
  return std::sqrt(s);
}

double relative_error(const std::vector<double> &analytic, const std::vector<double> &numeric) {
  std::vector<double> diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i)
    diff[i] = analytic[i] - numeric[i];
  const double denom = norm(analytic) + norm(numeric);
  return denom == 0.0 ? 0.0 : norm(diff) / denom;
}

double weighted_sum(const Tensor64 &out, const std::vector<double> &weights) {
  double s = 0.0;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    s += d[i] * weights[i];
  return s;
}

/// Largest per-input relative error for loss = sum(op(inputs) * R).
double check_op(const std::vector<Arg> &args, const OpFn &op, Rng &rng, double h) {
  Inputs leaves;
  for (const auto &a : args)
    leaves.push_back(Tensor64(a.shape, a.values).set_requires_grad(a.differentiable));
  const Tensor64 out = op(leaves);
  const auto weights = uniform_values(out.shape(), rng, -1.0, 1.0);
  backward(sum(mul(out, Tensor64(out.shape(), weights))));

  double worst = 0.0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!args[i].differentiable)
      continue;
    const auto g = leaves[i].grad();
    const std::vector<double> analytic(g.begin(), g.end());
    std::vector<double> numeric(analytic.size());
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      auto eval = [&](double delta) {
        NoGradGuard guard;
        Inputs probe;
        for (std::size_t k = 0; k < args.size(); ++k) {
          auto values = args[k].values;
          if (k == i)
            values[j] += delta;
          probe.push_back(Tensor64(args[k].shape, std::move(values)));
        }
        return weighted_sum(op(probe), weights);
      };
      numeric[j] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

struct CaseResult {
  double rel_error = 0.0;
  int skipped = 0;
};

/// Full joint loss on the tiny network: gradient w.r.t. every parameter.
CaseResult check_joint(Rng &rng, double h, ConsistencyTarget target) {
  Network<double> net(tiny_layers(2, 3), rng.next_u64());
  // Perturb the affine parameters away from their initial values.
  for (auto &p : net.parameters())
    if (p.name.find(".bn.") != std::string::npos)
      for (auto &x : p.tensor.mutable_data())
        x += rng.uniform(-0.3, 0.3);
  const std::int64_t B = 3;
  const Shape image_shape{B, 1, 8, 8};
  const Tensor64 images(image_shape, uniform_values(image_shape, rng, 0.0, 1.0));
  std::vector<double> t(static_cast<std::size_t>(B * 2), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    t[static_cast<std::size_t>(b * 2 + rng.uniform_int(0, 1))] = 1.0;
  const Tensor64 targets(Shape{B, 2}, t);
  const Tensor64 first(image_shape, uniform_values(image_shape, rng, 0.0, 1.0));
  const Tensor64 second(image_shape, uniform_values(image_shape, rng, 0.0, 1.0));
  const double alpha = rng.uniform(0.5, 2.0);

  auto loss = [&](Network<double> &n) {
    return joint_loss<double>(n, images, targets, &first, &second, alpha, target).total;
  };
  Network<double> work = net;
  work.zero_grad();
  backward(loss(work));
  double base = 0.0;
  {
    NoGradGuard guard;
    Network<double> probe = net;
    base = loss(probe).item();
  }
  double worst = 0.0;
  int skipped = 0;
  for (std::size_t i = 0; i < work.parameters().size(); ++i) {
    const auto g = work.parameters()[i].tensor.grad();
    const std::vector<double> analytic(g.begin(), g.end());
    std::vector<double> numeric(analytic.size());
    std::vector<char> keep(analytic.size(), 1);
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      auto eval = [&](double delta) {
        NoGradGuard guard;
        Network<double> probe = net;
        probe.parameters()[i].tensor.mutable_data()[j] += delta;
        return loss(probe).item();
      };
      // One-sided slopes that disagree mean the probe crossed a ReLU kink or
      // a max-pool switch; retry closer in, then give up on the entry.
      auto straddles = [&](double up, double down, double step) {
        const double fwd = (up - base) / step, bwd = (base - down) / step;
        return std::abs(fwd - bwd) > kKinkRatio * (std::abs(fwd) + std::abs(bwd)) + kKinkFloor;
      };
      double step = h;
      double up = eval(step), down = eval(-step);
      if (straddles(up, down, step)) {
        step = h / 100.0;
        up = eval(step);
        down = eval(-step);
        if (straddles(up, down, step)) {
          ++skipped;
          keep[j] = 0;
        }
      }
      numeric[j] = (up - down) / (2.0 * step);
    }
    std::vector<double> a, n;
    for (std::size_t j = 0; j < numeric.size(); ++j)
      if (keep[j]) {
        a.push_back(analytic[j]);
        n.push_back(numeric[j]);
      }
    worst = std::max(worst, relative_error(a, n));
  }
  return {worst, skipped};
}

struct OpCase {
  std::string name;
  std::function<CaseResult(Rng &, double)> run;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto simple = [&](std::string name, std::function<std::vector<Arg>(Rng &)> make, OpFn op) {
    cases.push_back({std::move(name), [make, op](Rng &rng, double h) {
                       const auto args = make(rng);
                       return CaseResult{check_op(args, op, rng, h), 0};
                     }});
  };
  auto arg = [](Shape s, std::vector<double> v, bool diff = true) {
    return Arg{std::move(s), std::move(v), diff};
  };

  simple(
      "conv2d",
      [&](Rng &r) {
        return std::vector<Arg>{arg({2, 2, 5, 4}, uniform_values({2, 2, 5, 4}, r, -1, 1)),
                                arg({3, 2, 3, 3}, uniform_values({3, 2, 3, 3}, r, -1, 1))};
      },
      [](const Inputs &in) { return conv2d(in[0], in[1]); });
  simple(
      "batch_norm_train",
      [&](Rng &r) {
        return std::vector<Arg>{arg({3, 2, 3, 3}, uniform_values({3, 2, 3, 3}, r, -1, 1)),
                                arg({2}, uniform_values({2}, r, 0.5, 1.5)),
                                arg({2}, uniform_values({2}, r, -0.5, 0.5))};
      },
      [](const Inputs &in) {
        BatchNormStats<double> stats(2);
        return batch_norm_train(in[0], in[1], in[2], stats);
      });
  simple(
      "batch_norm_train_2d",
      [&](Rng &r) {
        return std::vector<Arg>{arg({5, 3}, uniform_values({5, 3}, r, -1, 1)),
                                arg({3}, uniform_values({3}, r, 0.5, 1.5)),
                                arg({3}, uniform_values({3}, r, -0.5, 0.5))};
      },
      [](const Inputs &in) {
        BatchNormStats<double> stats(3);
        return batch_norm_train(in[0], in[1], in[2], stats);
      });
  simple(
      "batch_norm_eval",
      [&](Rng &r) {
        return std::vector<Arg>{arg({2, 2, 3, 3}, uniform_values({2, 2, 3, 3}, r, -1, 1)),
                                arg({2}, uniform_values({2}, r, 0.5, 1.5)),
                                arg({2}, uniform_values({2}, r, -0.5, 0.5))};
      },
      [](const Inputs &in) {
        BatchNormStats<double> stats(2);
        stats.running_mean = {0.2, -0.1};
        stats.running_var = {0.7, 1.3};
        return batch_norm_eval(in[0], in[1], in[2], stats);
      });
  simple(
      "relu", [&](Rng &r) { return std::vector<Arg>{arg({3, 7}, away_from_zero({3, 7}, r))}; },
      [](const Inputs &in) { return relu(in[0]); });
  simple(
      "max_pool2",
      [&](Rng &r) { return std::vector<Arg>{arg({2, 2, 4, 6}, distinct_values({2, 2, 4, 6}, r))}; },
      [](const Inputs &in) { return max_pool2(in[0]); });
  simple(
      "global_avg_pool",
      [&](Rng &r) {
        return std::vector<Arg>{arg({2, 3, 3, 4}, uniform_values({2, 3, 3, 4}, r, -1, 1))};
      },
      [](const Inputs &in) { return global_avg_pool(in[0]); });
  simple(
      "dense",
      [&](Rng &r) {
        return std::vector<Arg>{arg({4, 5}, uniform_values({4, 5}, r, -1, 1)),
                                arg({5, 3}, uniform_values({5, 3}, r, -1, 1))};
      },
      [](const Inputs &in) { return dense(in[0], in[1]); });
  simple(
      "softmax",
      [&](Rng &r) { return std::vector<Arg>{arg({3, 4}, uniform_values({3, 4}, r, -2, 2))}; },
      [](const Inputs &in) { return softmax(in[0]); });
  simple(
      "add",
      [&](Rng &r) {
        return std::vector<Arg>{arg({3, 4}, uniform_values({3, 4}, r, -1, 1)),
                                arg({3, 4}, uniform_values({3, 4}, r, -1, 1))};
      },
      [](const Inputs &in) { return add(in[0], in[1]); });
  simple(
      "mul",
      [&](Rng &r) {
        return std::vector<Arg>{arg({3, 4}, uniform_values({3, 4}, r, -1, 1)),
                                arg({3, 4}, uniform_values({3, 4}, r, -1, 1))};
      },
      [](const Inputs &in) { return mul(in[0], in[1]); });
  simple(
      "scale",
      [&](Rng &r) { return std::vector<Arg>{arg({3, 4}, uniform_values({3, 4}, r, -1, 1))}; },
      [](const Inputs &in) { return scale(in[0], -1.7); });
  simple(
      "square",
      [&](Rng &r) { return std::vector<Arg>{arg({3, 4}, uniform_values({3, 4}, r, -1, 1))}; },
      [](const Inputs &in) { return square(in[0]); });
  simple(
      "sum",
      [&](Rng &r) { return std::vector<Arg>{arg({3, 4}, uniform_values({3, 4}, r, -1, 1))}; },
      [](const Inputs &in) { return sum(in[0]); });
  simple(
      "mean",
      [&](Rng &r) { return std::vector<Arg>{arg({3, 4}, uniform_values({3, 4}, r, -1, 1))}; },
      [](const Inputs &in) { return mean(in[0]); });
  simple(
      "cross_entropy",
      [&](Rng &r) {
        std::vector<double> t(12, 0.0);
        for (int b = 0; b < 4; ++b)
          t[static_cast<std::size_t>(b * 3 + r.uniform_int(0, 2))] = 1.0;
        return std::vector<Arg>{arg({4, 3}, t, false),
                                arg({4, 3}, uniform_values({4, 3}, r, 0.05, 1.0))};
      },
      [](const Inputs &in) { return cross_entropy(in[0], in[1]); });
  simple(
      "consistency_mse",
      [&](Rng &r) {
        return std::vector<Arg>{arg({4, 3}, uniform_values({4, 3}, r, 0, 1)),
                                arg({4, 3}, uniform_values({4, 3}, r, 0, 1))};
      },
      [](const Inputs &in) { return consistency_mse(in[0], in[1]); });
  cases.push_back({"joint_loss/probabilities", [](Rng &rng, double h) {
                     return check_joint(rng, h, ConsistencyTarget::probabilities);
                   }});
  cases.push_back({"joint_loss/logits", [](Rng &rng, double h) {
                     return check_joint(rng, h, ConsistencyTarget::logits);
                   }});
  return cases;
}

} // namespace

GradCheckReport run_gradcheck(const GradCheckOptions &options) {
  if (options.cases_per_op < 1)
    throw UsageError("cases_per_op must be at least 1");
  if (!(options.step > 0.0))
    throw UsageError("finite-difference step must be positive");
  GradCheckReport report;
  const Rng root(options.seed);
  const auto cases = op_cases();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    OpCheck check;
    check.op = cases[i].name;
    for (int c = 0; c < options.cases_per_op; ++c) {
      Rng rng = root.split(i).split(static_cast<std::uint64_t>(c));
      const CaseResult res = cases[i].run(rng, options.step);
      const double err = std::isnan(res.rel_error) ? INFINITY : res.rel_error;
      check.max_rel_error = std::max(check.max_rel_error, err);
      check.skipped += res.skipped;
      ++check.cases;
    }
    check.passed = check.max_rel_error < options.tolerance;
    report.total_cases += check.cases;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.ops.push_back(check);
  }
  report.passed = std::all_of(report.ops.begin(), report.ops.end(),
                              [](const OpCheck &c) { return c.passed; });
  return report;
}

} // namespace selfens
