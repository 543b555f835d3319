#include "selfens/datastore.hpp"

#include "selfens/errors.hpp"
#include "selfens/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

namespace selfens {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep)
    out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string> &items, const std::string &sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i)
      out += sep;
    out += items[i];
  }
  return out;
}

} // namespace

std::filesystem::path Manifest::resolve(std::size_t id) const {
  const std::filesystem::path p(records.at(id).path);
  return p.is_absolute() ? p : root / p;
}

Manifest load_manifest(const std::filesystem::path &path, const ManifestOptions &options) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open manifest: " + path.string());
  Manifest m;
  m.root = path.parent_path();

  struct Row {
    std::size_t line;
    std::string path, label, subject;
  };
  std::vector<Row> rows;
  bool have_header = false;
  bool declared_classes = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty())
      continue;
    if (t.front() == '#') {
      const auto body = trim(t.substr(1));
      if (body.rfind("classes:", 0) == 0) {
        for (auto &name : split(body.substr(8), ','))
          if (!name.empty())
            m.class_names.push_back(name);
        declared_classes = true;
      }
      continue;
    }
    const auto fields = split(t, ',');
    if (!have_header) {
      if (fields.size() < 2 || fields[0] != "path" || fields[1] != "label")
        throw DataError("manifest " + path.string() + " line " + std::to_string(line_no) +
                        ": expected header 'path,label,subject'");
      have_header = true;
      continue;
    }
    if (fields.size() < 1 || fields.size() > 3 || fields[0].empty())
      throw DataError("manifest " + path.string() + " row " + std::to_string(line_no) +
                      ": expected 'path,label,subject'");
    rows.push_back({line_no, fields[0], fields.size() > 1 ? fields[1] : "",
                    fields.size() > 2 ? fields[2] : ""});
  }

  if (!have_header && rows.empty()) {
    m.warnings.push_back("manifest " + path.string() + " is empty");
    return m;
  }
  if (rows.empty())
    m.warnings.push_back("manifest " + path.string() + " has no records");

  if (!declared_classes) {
    std::set<std::string> labels;
    for (const auto &r : rows)
      if (!r.label.empty())
        labels.insert(r.label);
    m.class_names.assign(labels.begin(), labels.end());
  }
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < m.class_names.size(); ++i)
    class_index[m.class_names[i]] = static_cast<int>(i);

  std::unordered_set<std::string> seen;
  for (const auto &r : rows) {
    const std::string where =
        "manifest " + path.string() + " row " + std::to_string(r.line) + ": ";
    if (!seen.insert(r.path).second)
      throw DataError(where + "duplicate path '" + r.path + "'");
    ManifestRecord rec;
    rec.path = r.path;
    if (!r.label.empty()) {
      auto it = class_index.find(r.label);
      if (it == class_index.end())
        throw DataError(where + "unknown label '" + r.label + "' (classes: " +
                        join(m.class_names, ", ") + ")");
      rec.label = it->second;
    }
    if (!r.subject.empty())
      rec.subject = r.subject;
    m.records.push_back(std::move(rec));
    const auto file = m.resolve(m.records.size() - 1);
    if (!std::filesystem::exists(file))
      throw DataError(where + "missing image file '" + file.string() + "'");
    if (options.verify_images) {
      try {
        (void)read_image(file);
      } catch (const DataError &e) {
        throw DataError(where + e.what());
      }
    }
  }
  return m;
}

void write_manifest(const Manifest &manifest, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw DataError("cannot write manifest: " + path.string());
  out << "# classes: " << join(manifest.class_names, ",") << '\n';
  out << "path,label,subject\n";
  for (const auto &r : manifest.records) {
    out << r.path << ',';
    if (r.label)
      out << manifest.class_names.at(static_cast<std::size_t>(*r.label));
    out << ',' << r.subject.value_or("") << '\n';
  }
  if (!out)
    throw DataError("failed writing manifest: " + path.string());
}

SplitPlan make_split(const Manifest &manifest, std::size_t budget, std::uint64_t seed,
                     bool stratify, double test_fraction) {
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw UsageError("test_fraction must lie in [0, 1)");
  const Rng root(seed);
  const auto &records = manifest.records;
  const int K = manifest.num_classes();

  // Subject groups; records without a subject form singleton groups.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i)
    groups[records[i].subject ? "s:" + *records[i].subject : "r:" + std::to_string(i)].push_back(i);
  std::vector<const std::vector<std::size_t> *> order;
  for (const auto &[key, ids] : groups)
    order.push_back(&ids);
  Rng group_rng = root.split(0);
  shuffle(order.begin(), order.end(), group_rng);

  std::size_t labeled_total = 0;
  for (const auto &r : records)
    labeled_total += r.label.has_value();
  const auto test_target = static_cast<std::size_t>(std::llround(test_fraction * labeled_total));

  std::vector<char> in_test(records.size(), 0);
  std::vector<char> excluded(records.size(), 0);
  std::vector<std::size_t> test_per_class(std::max(K, 1), 0);
  std::size_t test_count = 0;
  for (const auto *ids : order) {
    if (test_count >= test_target)
      break;
    std::vector<std::size_t> per_class(std::max(K, 1), 0);
    std::size_t labeled_here = 0;
    for (auto id : *ids)
      if (records[id].label) {
        ++per_class[static_cast<std::size_t>(*records[id].label)];
        ++labeled_here;
      }
    if (labeled_here == 0)
      continue;
    if (stratify && K > 0) {
      const auto major = static_cast<std::size_t>(
          std::max_element(per_class.begin(), per_class.end()) - per_class.begin());
      const std::size_t class_target = (test_target + K - 1) / K;
      if (test_per_class[major] >= class_target)
        continue;
    }
    for (auto id : *ids) {
      if (records[id].label) {
        in_test[id] = 1;
        ++test_per_class[static_cast<std::size_t>(*records[id].label)];
        ++test_count;
      } else {
        // unlabeled images of a test subject may not leak into training
        excluded[id] = 1;
      }
    }
  }

  SplitPlan plan;
  plan.budget = budget;
  plan.seed = seed;
  plan.stratify = stratify;
  plan.test_fraction = test_fraction;
  plan.record_count = records.size();

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (in_test[i])
      plan.test.push_back(i);
    else if (!excluded[i] && records[i].label)
      pool.push_back(i);
  }
  if (budget > pool.size())
    throw DataError("label budget " + std::to_string(budget) + " exceeds the " +
                    std::to_string(pool.size()) + " labeled training records");
  Rng pool_rng = root.split(1);
  shuffle(pool.begin(), pool.end(), pool_rng);

  std::vector<char> chosen(records.size(), 0);
  if (stratify && K > 0) {
    std::vector<std::vector<std::size_t>> by_class(K);
    for (auto id : pool)
      by_class[static_cast<std::size_t>(*records[id].label)].push_back(id);
    for (int k = 0; k < K; ++k) {
      const std::size_t quota = budget / K + (static_cast<std::size_t>(k) < budget % K ? 1 : 0);
      if (quota > by_class[k].size())
        throw DataError("stratified budget " + std::to_string(budget) + " needs " +
                        std::to_string(quota) + " records of class '" + manifest.class_names[k] +
                        "', only " + std::to_string(by_class[k].size()) + " available");
      for (std::size_t i = 0; i < quota; ++i)
        chosen[by_class[k][i]] = 1;
    }
  } else {
    for (std::size_t i = 0; i < budget; ++i)
      chosen[pool[i]] = 1;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (in_test[i] || excluded[i])
      continue;
    (chosen[i] ? plan.labeled : plan.unlabeled).push_back(i);
  }
  return plan;
}

void save_plan(const SplitPlan &plan, const std::filesystem::path &path) {
  nlohmann::json j;
  j["format"] = "selfens-split";
  j["version"] = 1;
  j["budget"] = plan.budget;
  j["seed"] = plan.seed;
  j["stratify"] = plan.stratify;
  j["test_fraction"] = plan.test_fraction;
  j["record_count"] = plan.record_count;
  j["labeled"] = plan.labeled;
  j["unlabeled"] = plan.unlabeled;
  j["test"] = plan.test;
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw DataError("cannot write split plan: " + path.string());
  out << j.dump(1) << '\n';
}

SplitPlan load_plan(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open split plan: " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "selfens-split" || j.value("version", 0) != 1)
      throw DataError("split plan " + path.string() + " has an unknown format or version");
    SplitPlan plan;
    plan.budget = j.at("budget").get<std::size_t>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.stratify = j.at("stratify").get<bool>();
    plan.test_fraction = j.at("test_fraction").get<double>();
    plan.record_count = j.at("record_count").get<std::size_t>();
    plan.labeled = j.at("labeled").get<std::vector<std::size_t>>();
    plan.unlabeled = j.at("unlabeled").get<std::vector<std::size_t>>();
    plan.test = j.at("test").get<std::vector<std::size_t>>();
    return plan;
  } catch (const nlohmann::json::exception &e) {
    throw DataError("malformed split plan " + path.string() + ": " + e.what());
  }
}

void validate_plan(const SplitPlan &plan, const Manifest &manifest) {
  if (plan.record_count != manifest.records.size())
    throw DataError("split plan was made for " + std::to_string(plan.record_count) +
                    " records, manifest has " + std::to_string(manifest.records.size()));
  std::vector<char> used(manifest.records.size(), 0);
  auto mark = [&](const std::vector<std::size_t> &ids, const char *set, bool need_label) {
    for (auto id : ids) {
      if (id >= manifest.records.size())
        throw DataError(std::string("split plan ") + set + " id " + std::to_string(id) +
                        " is outside the manifest");
      if (used[id]++)
        throw DataError("split plan uses record " + std::to_string(id) + " twice");
      if (need_label && !manifest.records[id].label)
        throw DataError(std::string("split plan ") + set + " record " + std::to_string(id) +
                        " has no label");
    }
  };
  mark(plan.labeled, "labeled", true);
  mark(plan.unlabeled, "unlabeled", false);
  mark(plan.test, "test", true);
}

SampleStore::SampleStore(const Manifest &manifest, const std::vector<std::size_t> &ids,
                         const AugmentSpec &spec, int threads)
    : spec_(spec), images_(manifest.records.size()) {
  spec_.validate();
  parallel_for(ids.size(), threads, [&](std::size_t i) {
    const auto id = ids[i];
    images_.at(id) = load_source(manifest.resolve(id), spec_);
  });
}

const Image &SampleStore::source(std::size_t id) const {
  if (id >= images_.size() || !images_[id])
    throw UsageError("record " + std::to_string(id) + " was not loaded into the sample store");
  return *images_[id];
}

std::size_t BatchStream::steps_per_epoch(std::size_t labeled, std::size_t unlabeled,
                                         int batch_size) {
  const auto b = static_cast<std::size_t>(batch_size);
  const std::size_t n = unlabeled > 0 ? unlabeled : labeled;
  return (n + b - 1) / b;
}

BatchStream::BatchStream(const SplitPlan &plan, const Manifest &manifest,
                         const SampleStore &store, const BatchOptions &options, int epoch)
    : manifest_(manifest), store_(store), options_(options),
      epoch_rng_(mix_seed(options.epoch_seed, static_cast<std::uint64_t>(epoch))),
      labeled_(plan.labeled), unlabeled_order_(plan.unlabeled) {
  if (options.batch_size < 1)
    throw UsageError("batch size must be at least 1");
  if (labeled_.empty())
    throw UsageError("the labeled set is empty; the supervised term is undefined");
  Rng order_rng = epoch_rng_.split(0);
  shuffle(unlabeled_order_.begin(), unlabeled_order_.end(), order_rng);
  steps_ = steps_per_epoch(labeled_.size(), unlabeled_order_.size(), options.batch_size);
}

std::vector<std::size_t> BatchStream::next_labeled_ids() {
  const auto b = static_cast<std::size_t>(options_.batch_size);
  if (unlabeled_order_.empty()) {
    // one pass over the labeled set
    if (step_ == 0) {
      labeled_cycle_ = labeled_;
      Rng rng = epoch_rng_.split(1);
      shuffle(labeled_cycle_.begin(), labeled_cycle_.end(), rng);
    }
    const std::size_t begin = step_ * b;
    const std::size_t end = std::min(begin + b, labeled_cycle_.size());
    return {labeled_cycle_.begin() + static_cast<std::ptrdiff_t>(begin),
            labeled_cycle_.begin() + static_cast<std::ptrdiff_t>(end)};
  }
  const std::size_t want = std::min(b, labeled_.size());
  std::vector<std::size_t> ids;
  ids.reserve(want);
  while (ids.size() < want) {
    if (cycle_pos_ == labeled_cycle_.size()) {
      labeled_cycle_ = labeled_;
      Rng rng = epoch_rng_.split(1 + cycle_count_++);
      shuffle(labeled_cycle_.begin(), labeled_cycle_.end(), rng);
      cycle_pos_ = 0;
    }
    ids.push_back(labeled_cycle_[cycle_pos_++]);
  }
  return ids;
}

std::optional<TrainStep> BatchStream::next() {
  if (step_ >= steps_)
    return std::nullopt;
  const auto &spec = store_.spec();
  const int H = spec.crop_size.height, W = spec.crop_size.width;
  const std::int64_t plane = std::int64_t{H} * W;
  const int K = manifest_.num_classes();

  TrainStep step;
  step.index = step_;
  step.labeled.ids = next_labeled_ids();
  const std::size_t nl = step.labeled.ids.size();
  std::vector<float> images(nl * plane), targets(nl * K, 0.0f);
  const Rng labeled_rng = epoch_rng_.split(0x4C42).split(step_);
  parallel_for(nl, options_.threads, [&](std::size_t i) {
    const auto id = step.labeled.ids[i];
    if (options_.augment_labeled) {
      Rng rng = labeled_rng.split(i);
      const Image view = augment_view(store_.source(id), spec, rng);
      std::copy(view.pixels.begin(), view.pixels.end(), images.begin() + i * plane);
    } else {
      const Tensor view = eval_path(store_.source(id), spec);
      std::copy(view.data().begin(), view.data().end(), images.begin() + i * plane);
    }
    targets[i * K + static_cast<std::size_t>(*manifest_.records[id].label)] = 1.0f;
  });
  step.labeled.images = Tensor(Shape{static_cast<std::int64_t>(nl), 1, H, W}, std::move(images));
  step.labeled.targets =
      Tensor(Shape{static_cast<std::int64_t>(nl), K}, std::move(targets));

  if (!unlabeled_order_.empty() && options_.with_unlabeled) {
    const auto b = static_cast<std::size_t>(options_.batch_size);
    const std::size_t begin = step_ * b;
    const std::size_t end = std::min(begin + b, unlabeled_order_.size());
    UnlabeledBatch u;
    u.ids.assign(unlabeled_order_.begin() + static_cast<std::ptrdiff_t>(begin),
                 unlabeled_order_.begin() + static_cast<std::ptrdiff_t>(end));
    const std::size_t nu = u.ids.size();
    std::vector<float> first(nu * plane), second(nu * plane);
    const Rng pair_rng = epoch_rng_.split(0x554C);
    parallel_for(nu, options_.threads, [&](std::size_t i) {
      const auto id = u.ids[i];
      const auto [a, c] = perturb_pair(store_.source(id), spec, pair_rng.split(id));
      std::copy(a.data().begin(), a.data().end(), first.begin() + i * plane);
      std::copy(c.data().begin(), c.data().end(), second.begin() + i * plane);
    });
    const Shape shape{static_cast<std::int64_t>(nu), 1, H, W};
    u.first = Tensor(shape, std::move(first));
    u.second = Tensor(shape, std::move(second));
    step.unlabeled = std::move(u);
  }
  ++step_;
  return step;
}

// Synthetic corpus.

namespace {

Image render_synthetic(int label, int size, Rng &subject_rng, Rng &rng) {
  // Subject-level appearance.
  const double background = subject_rng.uniform(0.15, 0.55);
  const double contrast = subject_rng.uniform(0.2, 0.4);
  const double base_radius = subject_rng.uniform(0.16, 0.24) * size;

  // Per-image nuisance.
  const double cx = size / 2.0 + rng.uniform(-0.12, 0.12) * size;
  const double cy = size / 2.0 + rng.uniform(-0.12, 0.12) * size;
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double aspect = label == 0 ? rng.uniform(1.0, 1.35) : rng.uniform(1.55, 2.0);
  const double radius = base_radius * rng.uniform(0.85, 1.15);
  const double major = radius * std::sqrt(aspect), minor = radius / std::sqrt(aspect);
  const double softness = rng.uniform(0.6, 1.6);
  const double ramp = rng.uniform(-0.12, 0.12);
  const double ramp_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double noise = 0.04;
  const double bg = background + rng.uniform(-0.05, 0.05);

  Image img(size, size, 1);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double rx = std::cos(ramp_angle), ry = std::sin(ramp_angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (ca * dx + sa * dy) / major, v = (-sa * dx + ca * dy) / minor;
      // signed distance proxy in pixels, positive inside
      const double d = (1.0 - std::sqrt(u * u + v * v)) * minor;
      const double inside = 1.0 / (1.0 + std::exp(-d / softness));
      const double shade = bg + ramp * ((x / (size - 1.0) - 0.5) * rx + (y / (size - 1.0) - 0.5) * ry);
      const double value = shade + contrast * inside + noise * rng.normal();
      img.at(x, y) = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  return img;
}

} // namespace

Manifest generate_synthetic(const std::filesystem::path &out_dir, int n_per_class, int image_size,
                            std::uint64_t seed, const SyntheticOptions &options) {
  if (n_per_class < 1)
    throw UsageError("n_per_class must be at least 1");
  if (image_size < 8)
    throw UsageError("image_size must be at least 8");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw DataError("cannot create output directory " + out_dir.string());

  Manifest m;
  m.root = out_dir;
  m.class_names = {"round", "elongated"};
  const Rng root(seed);
  const int per_subject = std::max(1, options.images_per_subject);
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < n_per_class; ++i) {
      const int subject = i / per_subject;
      const std::size_t index = m.records.size();
      Rng subject_rng = root.split(0x5355).split(static_cast<std::uint64_t>(label)).split(subject);
      Rng rng = root.split(index);
      const Image img = render_synthetic(label, image_size, subject_rng, rng);
      std::ostringstream name;
      name << "img_" << std::setw(6) << std::setfill('0') << index << ".pgm";
      write_pnm(img, out_dir / name.str());
      std::ostringstream subj;
      subj << 'c' << label << "s" << std::setw(4) << std::setfill('0') << subject;
      m.records.push_back({name.str(), label, subj.str()});
    }
  }
  write_manifest(m, out_dir / "manifest.csv");
  return m;
}

} // namespace selfens
