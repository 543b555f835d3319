#include "selfens/errors.hpp"
#include "selfens/metrics.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace selfens;

TEST_CASE("argmax prefers the lowest index on ties") {
  const std::vector<float> row{0.2f, 0.4f, 0.4f};
  CHECK(argmax(row) == 1);
  CHECK_THROWS_AS(argmax(std::span<const float>{}), UsageError);
}

TEST_CASE("confusion, recall and accuracy by hand") {
  const std::vector<int> truth{0, 0, 0, 1, 1}, pred{0, 1, 0, 1, 1};
  const auto r = evaluate_predictions(truth, pred, 3, false, {"f", "m", "x"});
  CHECK(r.confusion == std::vector<std::vector<std::int64_t>>{{2, 1, 0}, {0, 2, 0}, {0, 0, 0}});
  CHECK(*r.recall[0] == doctest::Approx(2.0 / 3));
  CHECK(*r.recall[1] == 1.0);
  CHECK_FALSE(r.recall[2].has_value());
  CHECK(r.accuracy == doctest::Approx(0.8));
  CHECK(r.samples == 5);
  CHECK(r.one_off == 0.0);
}

TEST_CASE("a collapsed classifier shows 100/0 recall") {
  const std::vector<int> truth{0, 1, 1, 0}, pred{0, 0, 0, 0};
  const auto r = evaluate_predictions(truth, pred, 2, false);
  CHECK(*r.recall[0] == 1.0);
  CHECK(*r.recall[1] == 0.0);
  CHECK(r.accuracy == 0.5);
}

TEST_CASE("ordinal exact and one-off accuracy") {
  const std::vector<int> truth{0, 3, 7, 4}, pred{1, 3, 5, 4};
  const auto r = evaluate_predictions(truth, pred, 8, true);
  CHECK(r.exact == 0.5);
  CHECK(r.one_off == 0.75);
  CHECK(r.accuracy == r.exact);
  CHECK_THROWS_AS(evaluate_predictions(truth, std::vector<int>{1, 2}, 8, true), UsageError);
  CHECK_THROWS_AS(evaluate_predictions(truth, std::vector<int>{1, 2, 3, 9}, 8, true), UsageError);
}

TEST_CASE("mean and population standard deviation") {
  const std::vector<double> v{47.97, 55.29};
  const auto ms = mean_std(v);
  CHECK(ms.mean == doctest::Approx(51.63));
  CHECK(ms.std == doctest::Approx(3.66));
  CHECK(format_mean_std(ms) == "51.63 \xC2\xB1 3.66");
  const std::vector<double> one{2.0};
  CHECK(mean_std(one).std == 0.0);
  CHECK_THROWS_AS(mean_std(std::span<const double>{}), UsageError);
}

TEST_CASE("report CSV round-trip is exact") {
  testutil::TempDir dir;
  const std::vector<int> truth{0, 1, 2, 2, 1, 0, 0}, pred{0, 2, 2, 1, 1, 0, 2};
  const auto r = evaluate_predictions(truth, pred, 4, true, {"a", "b", "c", "d"});
  write_report_csv(r, dir / "r.csv", {{"alpha", "1"}, {"fold", "2"}});
  std::map<std::string, std::string> extra;
  CHECK(read_report_csv(dir / "r.csv", &extra) == r);
  CHECK(extra.at("fold") == "2");
  CHECK(report_csv(r).rfind("key,value\n", 0) == 0);
  testutil::write_file(dir / "bad.csv", "key,value\ntask,classification\n");
  CHECK_THROWS_AS(read_report_csv(dir / "bad.csv"), DataError);
}

TEST_CASE("comparison tables") {
  const std::vector<int> truth{0, 0, 1, 1};
  const auto sup = evaluate_predictions(truth, std::vector<int>{0, 0, 0, 0}, 2, false, {"f", "m"});
  const auto semi = evaluate_predictions(truth, std::vector<int>{0, 0, 1, 0}, 2, false, {"f", "m"});
  const Table t = report_table({{"50", 50, 5000, sup, semi}, {"100", 100, 4950, std::nullopt, semi}});
  CHECK(t.csv ==
        "labeled,unlabeled,f%,m%,ACC%\n"
        "50,5000,100.00/100.00,0.00/50.00,50.00/75.00\n"
        "100,4950,-/100.00,-/50.00,-/75.00\n");
  CHECK(t.text.find("ACC%") != std::string::npos);

  const auto o1 = evaluate_predictions(std::vector<int>{0, 1}, std::vector<int>{0, 0}, 3, true);
  const auto o2 = evaluate_predictions(std::vector<int>{0, 1}, std::vector<int>{0, 1}, 3, true);
  const Table ot = report_table({{"0", 0, 0, o1, o2}, {"1", 0, 0, o2, o2}});
  CHECK(ot.csv.find("mean,75.00 \xC2\xB1 25.00/100.00 \xC2\xB1 0.00") != std::string::npos);

  CHECK_THROWS_AS(report_table({{"x", 0, 0, sup, o1}}), UsageError);
  CHECK_THROWS_AS(report_table({}), UsageError);
}
