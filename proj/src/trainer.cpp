#include "selfens/trainer.hpp"

#include "selfens/errors.hpp"
#include "selfens/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace selfens {

namespace {

constexpr double kProbFloor = 1e-12;

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string log_num(double v) {
  if (std::isnan(v))
    return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double to_double(const std::string &key, const std::string &value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size())
      return v;
  } catch (const std::exception &) {
  }
  throw UsageError("config key '" + key + "' expects a number, got '" + value + "'");
}

long long to_int(const std::string &key, const std::string &value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used == value.size())
      return v;
  } catch (const std::exception &) {
  }
  throw UsageError("config key '" + key + "' expects an integer, got '" + value + "'");
}

std::uint64_t to_u64(const std::string &key, const std::string &value) {
  try {
    std::size_t used = 0;
    if (!value.empty() && value[0] != '-') {
      const unsigned long long v = std::stoull(value, &used);
      if (used == value.size())
        return v;
    }
  } catch (const std::exception &) {
  }
  throw UsageError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
}

bool to_bool(const std::string &key, const std::string &value) {
  if (value == "true" || value == "1" || value == "yes")
    return true;
  if (value == "false" || value == "0" || value == "no")
    return false;
  throw UsageError("config key '" + key + "' expects true or false, got '" + value + "'");
}

std::string class_list(const Manifest &manifest) {
  std::string out;
  for (std::size_t k = 0; k < manifest.class_names.size(); ++k)
    out += (k ? ";" : "") + manifest.class_names[k];
  return out;
}

} // namespace

TrainConfig TrainConfig::preset(const std::string &task) {
  TrainConfig cfg;
  cfg.task = task;
  if (task == "gender") {
    cfg.batch_size = 32;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 50;
    cfg.ordinal = false;
  } else if (task == "age") {
    cfg.batch_size = 64;
    cfg.learning_rate = 1e-4;
    cfg.epochs = 200;
    cfg.ordinal = true;
  } else {
    throw UsageError("unknown task preset '" + task + "' (expected gender or age)");
  }
  return cfg;
}

AugmentSpec TrainConfig::augment_spec() const {
  AugmentSpec spec;
  spec.brightness_delta = brightness_delta;
  spec.saturation_min = saturation_min;
  spec.saturation_max = saturation_max;
  spec.hflip_probability = hflip_probability;
  spec.random_crop = random_crop;
  spec.source_size = {source_size, source_size};
  spec.crop_size = {crop_size, crop_size};
  spec.validate();
  return spec;
}

BatchNormOptions TrainConfig::batch_norm_options() const {
  BatchNormOptions bn;
  bn.epsilon = bn_epsilon;
  bn.momentum = bn_momentum;
  return bn;
}

double TrainConfig::alpha_at(int epoch) const {
  if (alpha_rampup_epochs <= 0)
    return alpha;
  return alpha * std::min(1.0, static_cast<double>(epoch + 1) / alpha_rampup_epochs);
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw UsageError("alpha must be a finite non-negative number");
  if (batch_size < 1)
    throw UsageError("batch_size must be at least 1");
  if (!(learning_rate > 0.0))
    throw UsageError("learning_rate must be positive");
  if (epochs < 1)
    throw UsageError("epochs must be at least 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw UsageError("adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0))
    throw UsageError("adam_epsilon must be positive");
  if (alpha_rampup_epochs < 0)
    throw UsageError("alpha_rampup_epochs must be non-negative");
  if (crop_size < 16 || crop_size % 16 != 0)
    throw UsageError("crop_size must be a positive multiple of 16 (four 2x pools), got " +
                     std::to_string(crop_size));
  if (!(bn_epsilon > 0.0) || !(bn_momentum >= 0.0 && bn_momentum <= 1.0))
    throw UsageError("bn_epsilon must be positive and bn_momentum in [0, 1]");
  (void)augment_spec();
}

void apply_setting(TrainConfig &cfg, const std::string &key, const std::string &value) {
  if (key == "task") {
    const TrainConfig p = TrainConfig::preset(value);
    cfg.task = p.task;
    cfg.batch_size = p.batch_size;
    cfg.learning_rate = p.learning_rate;
    cfg.epochs = p.epochs;
    cfg.ordinal = p.ordinal;
  } else if (key == "alpha") {
    cfg.alpha = to_double(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = static_cast<int>(to_int(key, value));
  } else if (key == "learning_rate") {
    cfg.learning_rate = to_double(key, value);
  } else if (key == "epochs") {
    cfg.epochs = static_cast<int>(to_int(key, value));
  } else if (key == "adam_beta1") {
    cfg.adam_beta1 = to_double(key, value);
  } else if (key == "adam_beta2") {
    cfg.adam_beta2 = to_double(key, value);
  } else if (key == "adam_epsilon") {
    cfg.adam_epsilon = to_double(key, value);
  } else if (key == "seed") {
    cfg.seed = to_u64(key, value);
  } else if (key == "consistency_target") {
    if (value == "probabilities")
      cfg.consistency_target = ConsistencyTarget::probabilities;
    else if (value == "logits")
      cfg.consistency_target = ConsistencyTarget::logits;
    else
      throw UsageError("consistency_target must be probabilities or logits, got '" + value + "'");
  } else if (key == "step_mode") {
    if (value == "combined")
      cfg.step_mode = StepMode::combined;
    else if (value == "alternating")
      cfg.step_mode = StepMode::alternating;
    else
      throw UsageError("step_mode must be combined or alternating, got '" + value + "'");
  } else if (key == "alpha_rampup_epochs") {
    cfg.alpha_rampup_epochs = static_cast<int>(to_int(key, value));
  } else if (key == "eval_each_epoch") {
    cfg.eval_each_epoch = to_bool(key, value);
  } else if (key == "augment_labeled") {
    cfg.augment_labeled = to_bool(key, value);
  } else if (key == "ordinal") {
    cfg.ordinal = to_bool(key, value);
  } else if (key == "crop_size") {
    cfg.crop_size = static_cast<int>(to_int(key, value));
  } else if (key == "source_size") {
    cfg.source_size = static_cast<int>(to_int(key, value));
  } else if (key == "brightness_delta") {
    cfg.brightness_delta = to_double(key, value);
  } else if (key == "saturation_min") {
    cfg.saturation_min = to_double(key, value);
  } else if (key == "saturation_max") {
    cfg.saturation_max = to_double(key, value);
  } else if (key == "hflip_probability") {
    cfg.hflip_probability = to_double(key, value);
  } else if (key == "random_crop") {
    cfg.random_crop = to_bool(key, value);
  } else if (key == "bn_epsilon") {
    cfg.bn_epsilon = to_double(key, value);
  } else if (key == "bn_momentum") {
    cfg.bn_momentum = to_double(key, value);
  } else {
    throw UsageError("unknown config key '" + key + "'");
  }
}

TrainConfig parse_config(const std::string &text, const std::string &origin) {
  std::vector<std::pair<std::string, std::string>> settings;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty())
      continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + " line " + std::to_string(line_no) + ": expected 'key = value'");
    settings.emplace_back(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  TrainConfig cfg;
  auto apply = [&](bool task_pass) {
    for (const auto &[key, value] : settings) {
      if ((key == "task") != task_pass)
        continue;
      try {
        apply_setting(cfg, key, value);
      } catch (const UsageError &e) {
        throw UsageError(origin + ": " + e.what());
      }
    }
  };
  apply(true);
  apply(false);
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open config: " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

std::string to_text(const TrainConfig &cfg) {
  std::ostringstream out;
  out << "task = " << cfg.task << '\n'
      << "alpha = " << num(cfg.alpha) << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "learning_rate = " << num(cfg.learning_rate) << '\n'
      << "epochs = " << cfg.epochs << '\n'
      << "adam_beta1 = " << num(cfg.adam_beta1) << '\n'
      << "adam_beta2 = " << num(cfg.adam_beta2) << '\n'
      << "adam_epsilon = " << num(cfg.adam_epsilon) << '\n'
      << "seed = " << cfg.seed << '\n'
      << "consistency_target = "
      << (cfg.consistency_target == ConsistencyTarget::probabilities ? "probabilities" : "logits")
      << '\n'
      << "step_mode = " << (cfg.step_mode == StepMode::combined ? "combined" : "alternating")
      << '\n'
      << "alpha_rampup_epochs = " << cfg.alpha_rampup_epochs << '\n'
      << "eval_each_epoch = " << (cfg.eval_each_epoch ? "true" : "false") << '\n'
      << "augment_labeled = " << (cfg.augment_labeled ? "true" : "false") << '\n'
      << "ordinal = " << (cfg.ordinal ? "true" : "false") << '\n'
      << "crop_size = " << cfg.crop_size << '\n'
      << "source_size = " << cfg.source_size << '\n'
      << "brightness_delta = " << num(cfg.brightness_delta) << '\n'
      << "saturation_min = " << num(cfg.saturation_min) << '\n'
      << "saturation_max = " << num(cfg.saturation_max) << '\n'
      << "hflip_probability = " << num(cfg.hflip_probability) << '\n'
      << "random_crop = " << (cfg.random_crop ? "true" : "false") << '\n'
      << "bn_epsilon = " << num(cfg.bn_epsilon) << '\n'
      << "bn_momentum = " << num(cfg.bn_momentum) << '\n';
  return out.str();
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T> &targets, const BasicTensor<T> &probs) {
  if (targets.rank() != 2 || targets.shape() != probs.shape())
    throw ShapeError("cross_entropy: targets " + to_string(targets.shape()) +
                     " and predictions " + to_string(probs.shape()) +
                     " must both be [B, K]");
  const std::int64_t B = probs.dim(0);
  if (B == 0)
    throw ShapeError("cross_entropy: empty batch");
  auto t = targets.data(), p = probs.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (t[i] != T(0))
      total -= static_cast<double>(t[i]) * std::log(std::max<double>(p[i], kProbFloor));
  return BasicTensor<T>::make_result(
      "cross_entropy", Shape{}, {static_cast<T>(total / static_cast<double>(B))},
      {targets, probs}, [targets, probs, B](std::span<const T> gout, const std::vector<T *> &gin) {
        auto t = targets.data(), p = probs.data();
        const double g = static_cast<double>(gout[0]) / static_cast<double>(B);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double pi = p[i];
          if (gin[0])
            gin[0][i] += static_cast<T>(-g * std::log(std::max(pi, kProbFloor)));
          if (gin[1] && pi > kProbFloor)
            gin[1][i] += static_cast<T>(-g * static_cast<double>(t[i]) / pi);
        }
      });
}

template <typename T>
BasicTensor<T> consistency_mse(const BasicTensor<T> &z1, const BasicTensor<T> &z2) {
  if (z1.shape() != z2.shape())
    throw ShapeError("consistency_mse: view predictions " + to_string(z1.shape()) + " and " +
                     to_string(z2.shape()) + " differ in shape");
  if (z1.numel() == 0)
    throw ShapeError("consistency_mse: empty predictions");
  return mean(square(add(z1, scale(z2, -1.0))));
}

template <typename T>
JointLoss<T> joint_loss(Network<T> &net, const BasicTensor<T> &images,
                        const BasicTensor<T> &targets, const BasicTensor<T> *first,
                        const BasicTensor<T> *second, double alpha, ConsistencyTarget target) {
  JointLoss<T> out;
  out.supervised = cross_entropy(targets, softmax(net.forward(images, Mode::train)));
  out.total = out.supervised;
  if (alpha == 0.0 || !first || !second)
    return out;
  auto predict = [&](const BasicTensor<T> &views) {
    BasicTensor<T> logits = net.forward(views, Mode::train);
    return target == ConsistencyTarget::probabilities ? softmax(logits) : logits;
  };
  const BasicTensor<T> z1 = predict(*first);
  const BasicTensor<T> z2 = predict(*second);
  out.consistency = consistency_mse(z1, z2);
  out.total = add(out.supervised, scale(out.consistency, alpha));
  return out;
}

JointLoss<float> joint_loss(Network<float> &net, const LabeledBatch &labeled,
                            const UnlabeledBatch *unlabeled, const TrainConfig &cfg,
                            double alpha) {
  return joint_loss<float>(net, labeled.images, labeled.targets,
                           unlabeled ? &unlabeled->first : nullptr,
                           unlabeled ? &unlabeled->second : nullptr, alpha,
                           cfg.consistency_target);
}

template <typename T>
void adam_step(std::vector<NamedTensor<T>> &params, AdamState<T> &state, const AdamOptions &opt) {
  for (const auto &p : params)
    if (p.tensor.has_grad())
      for (T g : p.tensor.grad())
        if (!std::isfinite(g))
          throw NumericError("non-finite gradient in parameter " + p.name + " at Adam step " +
                             std::to_string(state.step + 1));
  if (state.m.empty()) {
    for (const auto &p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
      state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
    }
  } else if (state.m.size() != params.size()) {
    throw UsageError("Adam state tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double b1 = opt.beta1, b2 = opt.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto &m = state.m[i];
    auto &v = state.v[i];
    if (m.size() != static_cast<std::size_t>(params[i].tensor.numel()))
      throw UsageError("Adam moment buffer shape mismatch for " + params[i].name);
    auto data = params[i].tensor.mutable_data();
    const bool has = params[i].tensor.has_grad();
    const std::span<const T> grad = has ? params[i].tensor.grad() : std::span<const T>{};
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = has ? static_cast<double>(grad[j]) : 0.0;
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = opt.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + opt.epsilon);
      data[j] = static_cast<T>(data[j] - update);
    }
  }
}

std::string epoch_csv_header() {
  return "epoch,sup_loss,cons_loss,total_loss,alpha,steps,eval_acc,eval_exact,eval_one_off";
}

std::string epoch_csv_row(const EpochLog &log) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double acc = log.eval ? log.eval->accuracy : nan;
  const double ex = log.eval && log.eval->ordinal ? log.eval->exact : nan;
  const double off = log.eval && log.eval->ordinal ? log.eval->one_off : nan;
  return std::to_string(log.epoch) + ',' + log_num(log.sup_loss) + ',' + log_num(log.cons_loss) +
         ',' + log_num(log.total_loss) + ',' + log_num(log.alpha) + ',' +
         std::to_string(log.steps) + ',' + log_num(acc) + ',' + log_num(ex) + ',' + log_num(off);
}

Network<float> initial_network(const TrainConfig &cfg, const Manifest &manifest) {
  if (manifest.num_classes() < 2)
    throw DataError("training needs at least 2 classes, manifest declares " +
                    std::to_string(manifest.num_classes()));
  Network<float> net(canonical_layers(manifest.num_classes()), mix_seed(cfg.seed, 1),
                     cfg.batch_norm_options());
  net.metadata["class_names"] = class_list(manifest);
  net.metadata["crop_size"] = std::to_string(cfg.crop_size);
  net.metadata["source_size"] = std::to_string(cfg.source_size);
  net.metadata["task"] = cfg.task;
  net.metadata["ordinal"] = cfg.ordinal ? "true" : "false";
  return net;
}

FitResult fit(const Manifest &manifest, const SplitPlan &plan, const TrainConfig &cfg,
              const FitOptions &options) {
  cfg.validate();
  validate_plan(plan, manifest);
  if (plan.labeled.empty())
    throw UsageError("the labeled set is empty; the supervised term is undefined");
  const AugmentSpec spec = cfg.augment_spec();

  bool any_consistency = false;
  for (int e = 0; e < cfg.epochs; ++e)
    any_consistency = any_consistency || cfg.alpha_at(e) > 0.0;
  std::vector<std::size_t> ids = plan.labeled;
  if (any_consistency)
    ids.insert(ids.end(), plan.unlabeled.begin(), plan.unlabeled.end());
  if (cfg.eval_each_epoch)
    ids.insert(ids.end(), plan.test.begin(), plan.test.end());
  const SampleStore store(manifest, ids, spec, options.threads);

  if (options.out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*options.out_dir, ec);
    if (ec || !std::filesystem::is_directory(*options.out_dir))
      throw DataError("cannot create run directory " + options.out_dir->string());
  }
  std::ofstream log_file;
  if (options.out_dir) {
    log_file.open(*options.out_dir / "epochs.csv", std::ios::trunc);
    if (!log_file)
      throw DataError("cannot write " + (*options.out_dir / "epochs.csv").string());
    log_file << epoch_csv_header() << '\n' << std::flush;
  }

  FitResult result;
  Network<float> net = initial_network(cfg, manifest);
  AdamState<float> adam;
  const AdamOptions adam_opt{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon};
  double best_acc = -1.0;

  auto fail = [&](const std::string &what) {
    if (options.out_dir)
      save_checkpoint(net, *options.out_dir / "last_good.ckpt");
    throw NumericError(what);
  };
  auto step_on = [&](const BasicTensor<float> &loss, int epoch, std::size_t step) {
    if (!std::isfinite(loss.item()))
      fail("non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
            std::to_string(step + 1));
    net.zero_grad();
    backward(loss);
    try {
      adam_step(net.parameters(), adam, adam_opt);
    } catch (const NumericError &e) {
      fail(e.what());
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double alpha = cfg.alpha_at(epoch);
    BatchOptions bo;
    bo.batch_size = cfg.batch_size;
    bo.epoch_seed = mix_seed(cfg.seed, 2);
    bo.with_unlabeled = alpha > 0.0;
    bo.augment_labeled = cfg.augment_labeled;
    bo.threads = options.threads;
    BatchStream stream(plan, manifest, store, bo, epoch);

    EpochLog log;
    log.epoch = epoch + 1;
    log.alpha = alpha;
    double sup = 0.0, cons = 0.0, total = 0.0;
    std::size_t cons_steps = 0;
    while (auto step = stream.next()) {
      const UnlabeledBatch *u = step->unlabeled ? &*step->unlabeled : nullptr;
      if (cfg.step_mode == StepMode::combined || !u) {
        const JointLoss<float> jl = joint_loss(net, step->labeled, u, cfg, alpha);
        step_on(jl.total, epoch, step->index);
        sup += jl.supervised.item();
        total += jl.total.item();
        if (jl.consistency.defined()) {
          cons += jl.consistency.item();
          ++cons_steps;
        }
      } else {
        const JointLoss<float> ce = joint_loss(net, step->labeled, nullptr, cfg, 0.0);
        step_on(ce.total, epoch, step->index);
        auto predict = [&](const Tensor &views) {
          Tensor logits = net.forward(views, Mode::train);
          return cfg.consistency_target == ConsistencyTarget::probabilities ? softmax(logits)
                                                                           : logits;
        };
        const Tensor z1 = predict(u->first);
        const Tensor z2 = predict(u->second);
        const Tensor c = consistency_mse(z1, z2);
        step_on(scale(c, alpha), epoch, step->index);
        sup += ce.total.item();
        cons += c.item();
        total += ce.total.item() + alpha * c.item();
        ++cons_steps;
      }
      ++log.steps;
    }
    const auto n = static_cast<double>(std::max<std::size_t>(log.steps, 1));
    log.sup_loss = sup / n;
    log.cons_loss =
        cons_steps ? cons / static_cast<double>(cons_steps) : std::numeric_limits<double>::quiet_NaN();
    log.total_loss = total / n;

    if (cfg.eval_each_epoch && !plan.test.empty()) {
      log.eval = evaluate(net, store, manifest, plan.test, cfg.ordinal, options.threads);
      if (log.eval->accuracy > best_acc) {
        best_acc = log.eval->accuracy;
        result.best = net;
        result.best_epoch = epoch + 1;
        if (options.out_dir)
          save_checkpoint(net, *options.out_dir / "best.ckpt");
      }
    }
    if (log_file.is_open())
      log_file << epoch_csv_row(log) << '\n' << std::flush;
    if (options.on_epoch)
      options.on_epoch(log);
    result.epochs.push_back(std::move(log));
  }

  if (result.best_epoch < 0) {
    result.best = net;
    result.best_epoch = cfg.epochs;
    if (options.out_dir)
      save_checkpoint(net, *options.out_dir / "best.ckpt");
  }
  if (options.out_dir)
    save_checkpoint(net, *options.out_dir / "final.ckpt");
  result.final = std::move(net);
  return result;
}

#define SELFENS_INSTANTIATE(T)                                                                   \
  template BasicTensor<T> cross_entropy(const BasicTensor<T> &, const BasicTensor<T> &);         \
  template BasicTensor<T> consistency_mse(const BasicTensor<T> &, const BasicTensor<T> &);       \
  template JointLoss<T> joint_loss(Network<T> &, const BasicTensor<T> &, const BasicTensor<T> &, \
                                   const BasicTensor<T> *, const BasicTensor<T> *, double,       \
                                   ConsistencyTarget);                                           \
  template void adam_step(std::vector<NamedTensor<T>> &, AdamState<T> &, const AdamOptions &);

SELFENS_INSTANTIATE(float)
SELFENS_INSTANTIATE(double)

#undef SELFENS_INSTANTIATE

} // namespace selfens
