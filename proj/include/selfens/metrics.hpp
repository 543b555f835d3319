#pragma once

#include "selfens/datastore.hpp"
#include "selfens/network.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace selfens {

struct MetricsReport {
  std::vector<std::string> class_names;
  /// confusion[truth][predicted]
  std::vector<std::vector<std::int64_t>> confusion;
  /// Per-class recall; empty for classes with no samples.
  std::vector<std::optional<double>> recall;
  double accuracy = 0.0;
  bool ordinal = false;
  /// Ordinal tasks only (0 otherwise).
  double exact = 0.0;
  double one_off = 0.0;
  std::int64_t samples = 0;

  int num_classes() const { return static_cast<int>(confusion.size()); }
  friend bool operator==(const MetricsReport &, const MetricsReport &) = default;
};

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const float> row);

MetricsReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted,
                                   int num_classes, bool ordinal,
                                   std::vector<std::string> class_names = {});

/// Predicts every id through the deterministic eval path in fixed batches,
/// so the report does not depend on the worker count.
MetricsReport evaluate(const Network<float> &net, const SampleStore &store,
                       const Manifest &manifest, const std::vector<std::size_t> &ids,
                       bool ordinal, int threads = 0);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and population (n-divisor) standard deviation.
MeanStd mean_std(std::span<const double> values);
/// "51.63 ± 3.66"
std::string format_mean_std(const MeanStd &value, int decimals = 2);

/// Human-readable block: confusion matrix, recalls, accuracy.
std::string format_report(const MetricsReport &report);

/// Report as `key,value` CSV rows. `extra` rows (run context such as label
/// counts) are written after the metrics and returned by read_report_csv.
std::string report_csv(const MetricsReport &report,
                       const std::map<std::string, std::string> &extra = {});
void write_report_csv(const MetricsReport &report, const std::filesystem::path &path,
                      const std::map<std::string, std::string> &extra = {});
MetricsReport read_report_csv(const std::filesystem::path &path,
                              std::map<std::string, std::string> *extra = nullptr);

/// One line of a comparison table: a label budget (or a fold) with the
/// supervised (alpha = 0) and semi-supervised results side by side.
struct ComparisonRow {
  std::string key;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  std::optional<MetricsReport> supervised;
  std::optional<MetricsReport> semi_supervised;
};

struct Table {
  std::string csv;
  std::string text;
};

/// Classification rows show per-class recall and accuracy; ordinal rows show
/// exact and one-off accuracy with a mean ± std row when there are several
/// folds. Cells are "supervised/semi-supervised" percentages, "-" when a
/// side is missing.
Table report_table(const std::vector<ComparisonRow> &rows);

} // namespace selfens
