// Randomized invariants over many generated inputs.
#include "selfens/datastore.hpp"
#include "selfens/errors.hpp"
#include "selfens/metrics.hpp"
#include "selfens/ops.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

using namespace selfens;

namespace {

Manifest random_manifest(Rng &rng) {
  Manifest m;
  const int K = static_cast<int>(rng.uniform_int(2, 4));
  for (int k = 0; k < K; ++k)
    m.class_names.push_back("c" + std::to_string(k));
  const auto n = static_cast<std::size_t>(rng.uniform_int(40, 200));
  const auto per_subject = rng.uniform_int(1, 4);
  const double unlabeled_share = rng.uniform(0.0, 0.6);
  for (std::size_t i = 0; i < n; ++i) {
    ManifestRecord r;
    r.path = "r" + std::to_string(i);
    if (!rng.bernoulli(unlabeled_share))
      r.label = static_cast<int>(rng.uniform_int(0, K - 1));
    if (per_subject > 1)
      r.subject = "s" + std::to_string(i / static_cast<std::size_t>(per_subject));
    m.records.push_back(r);
  }
  return m;
}

std::string subject_of(const Manifest &m, std::size_t id) {
  return m.records[id].subject ? *m.records[id].subject : "#" + std::to_string(id);
}

} // namespace

TEST_CASE("split invariants over random manifests") {
  Rng rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Manifest m = random_manifest(rng);
    const bool stratify = rng.bernoulli(0.5);
    const auto budget = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const double frac = rng.uniform(0.1, 0.4);
    const std::uint64_t seed = rng.next_u64();
    SplitPlan plan;
    try {
      plan = make_split(m, budget, seed, stratify, frac);
    } catch (const DataError &) {
      continue; // not enough labeled records of some class
    }
    ++checked;
    CHECK_NOTHROW(validate_plan(plan, m));
    CHECK(plan.labeled.size() == budget);
    CHECK(std::ranges::is_sorted(plan.labeled));
    CHECK(std::ranges::is_sorted(plan.test));

    std::set<std::string> test_subjects, train_subjects;
    for (auto id : plan.test)
      test_subjects.insert(subject_of(m, id));
    for (const auto *set : {&plan.labeled, &plan.unlabeled})
      for (auto id : *set)
        train_subjects.insert(subject_of(m, id));
    for (const auto &s : test_subjects)
      CHECK(train_subjects.count(s) == 0);

    // every record outside the test subjects lands somewhere
    std::size_t outside = 0;
    for (std::size_t i = 0; i < m.records.size(); ++i)
      outside += test_subjects.count(subject_of(m, i)) == 0;
    CHECK(plan.labeled.size() + plan.unlabeled.size() == outside);

    if (stratify) {
      std::map<int, int> counts;
      for (int k = 0; k < m.num_classes(); ++k)
        counts[k] = 0;
      for (auto id : plan.labeled)
        ++counts[*m.records[id].label];
      const auto [lo, hi] = std::ranges::minmax_element(
          counts, {}, [](const auto &kv) { return kv.second; });
      CHECK(hi->second - lo->second <= 1);
    }
    CHECK(make_split(m, budget, seed, stratify, frac) == plan);
  }
  CHECK(checked > 100);
}

TEST_CASE("metric identities over random predictions") {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const int K = static_cast<int>(rng.uniform_int(2, 8));
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 60));
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.uniform_int(0, K - 1));
      pred[i] = rng.bernoulli(0.5) ? truth[i] : static_cast<int>(rng.uniform_int(0, K - 1));
    }
    const auto r = evaluate_predictions(truth, pred, K, true);
    std::int64_t total = 0, diag = 0;
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < K; ++j) {
        total += r.confusion[k][j];
        diag += k == j ? r.confusion[k][j] : 0;
      }
    CHECK(total == static_cast<std::int64_t>(n));
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(diag) / n));
    CHECK(r.one_off >= r.exact);
    for (int k = 0; k < K; ++k)
      if (r.recall[k])
        CHECK((*r.recall[k] >= 0.0 && *r.recall[k] <= 1.0));
  }
}

TEST_CASE("softmax rows are distributions and shift invariant") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto B = rng.uniform_int(1, 5), K = rng.uniform_int(2, 9);
    std::vector<double> v(static_cast<std::size_t>(B * K));
    for (auto &x : v)
      x = rng.uniform(-30, 30);
    const Tensor64 logits({B, K}, v);
    const double shift = rng.uniform(-100, 100);
    for (auto &x : v)
      x += shift;
    const auto p = softmax(logits), q = softmax(Tensor64({B, K}, v));
    for (std::int64_t b = 0; b < B; ++b) {
      double s = 0;
      for (std::int64_t k = 0; k < K; ++k) {
        const auto i = static_cast<std::size_t>(b * K + k);
        s += p[i];
        CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-9));
      }
      CHECK(s == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("batch streams do not depend on the worker count") {
  testutil::TempDir dir;
  const Manifest m = generate_synthetic(dir.path(), 10, 18, 5, SyntheticOptions{2});
  const SplitPlan plan = make_split(m, 4, 2, true, 0.2);
  std::vector<std::size_t> ids = plan.labeled;
  ids.insert(ids.end(), plan.unlabeled.begin(), plan.unlabeled.end());
  const SampleStore store(m, ids, AugmentSpec::for_crop(16), 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    BatchOptions a, b;
    a.batch_size = b.batch_size = 3;
    a.epoch_seed = b.epoch_seed = 11;
    a.threads = 1;
    b.threads = 4;
    BatchStream sa(plan, m, store, a, epoch), sb(plan, m, store, b, epoch);
    std::set<std::size_t> seen;
    while (auto x = sa.next()) {
      const auto y = sb.next();
      REQUIRE(y);
      CHECK(x->labeled.ids == y->labeled.ids);
      CHECK(std::ranges::equal(x->labeled.images.data(), y->labeled.images.data()));
      CHECK(x->unlabeled->ids == y->unlabeled->ids);
      CHECK(std::ranges::equal(x->unlabeled->first.data(), y->unlabeled->first.data()));
      CHECK(std::ranges::equal(x->unlabeled->second.data(), y->unlabeled->second.data()));
      for (auto id : x->unlabeled->ids)
        CHECK(seen.insert(id).second);
    }
    CHECK(seen.size() == plan.unlabeled.size());
    CHECK_FALSE(sb.next());
  }
}

TEST_CASE("evaluation does not depend on the worker count") {
  testutil::TempDir dir;
  const Manifest m = generate_synthetic(dir.path(), 40, 18, 6, SyntheticOptions{4});
  std::vector<std::size_t> ids(m.records.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    ids[i] = i;
  const SampleStore store(m, ids, AugmentSpec::for_crop(16));
  const Network<float> net = build_canonical(2, 3);
  CHECK(evaluate(net, store, m, ids, false, 1) == evaluate(net, store, m, ids, false, 4));
}

TEST_CASE("checkpoint round trip for random networks") {
  testutil::TempDir dir;
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const int K = static_cast<int>(rng.uniform_int(2, 10));
    Network<float> net = build_canonical(K, rng.next_u64());
    for (auto &st : net.batch_norm_stats())
      for (auto &v : st.running_var)
        v = static_cast<float>(rng.uniform(0.1, 3.0));
    save_checkpoint(net, dir / "n.ckpt");
    const auto back = load_checkpoint(dir / "n.ckpt");
    CHECK(back.num_classes() == K);
    for (std::size_t i = 0; i < net.batch_norm_stats().size(); ++i)
      CHECK(back.batch_norm_stats()[i].running_var == net.batch_norm_stats()[i].running_var);
    for (std::size_t i = 0; i < net.parameters().size(); ++i)
      CHECK(std::ranges::equal(back.parameters()[i].tensor.data(), net.parameters()[i].tensor.data()));
  }
}
