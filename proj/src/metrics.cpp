#include "selfens/metrics.hpp"

#include "selfens/errors.hpp"
#include "selfens/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace selfens {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::string fmt(const char *format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

std::string exact_double(double v) { return fmt("%.17g", v); }

std::string percent(double v) { return fmt("%.2f", 100.0 * v); }

std::vector<std::string> split_on(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    out.push_back(cur);
  return out;
}

double parse_double(const std::string &s, const std::string &key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw DataError("report field '" + key + "' is not a number: '" + s + "'");
  }
}

std::int64_t parse_int(const std::string &s, const std::string &key) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw DataError("report field '" + key + "' is not an integer: '" + s + "'");
  }
}

std::string pad(const std::string &s, std::size_t width, bool left_align) {
  // count code points so "±" does not break alignment
  std::size_t len = 0;
  for (unsigned char c : s)
    len += (c & 0xC0) != 0x80;
  if (len >= width)
    return s;
  const std::string fill(width - len, ' ');
  return left_align ? s + fill : fill + s;
}

std::string render(const std::vector<std::vector<std::string>> &cells) {
  std::vector<std::size_t> widths;
  for (const auto &row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::size_t len = 0;
      for (unsigned char ch : row[c])
        len += (ch & 0xC0) != 0x80;
      if (widths.size() <= c)
        widths.push_back(0);
      widths[c] = std::max(widths[c], len);
    }
  std::string out;
  for (const auto &row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c)
        out += "  ";
      out += pad(row[c], widths[c], c == 0);
    }
    out += '\n';
  }
  return out;
}

std::string csv_line(const std::vector<std::string> &row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i)
      out += ',';
    out += row[i];
  }
  return out + '\n';
}

} // namespace

int argmax(std::span<const float> row) {
  if (row.empty())
    throw UsageError("argmax of an empty row");
  int best = 0;
  for (std::size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[static_cast<std::size_t>(best)])
      best = static_cast<int>(k);
  return best;
}

MetricsReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted,
                                   int num_classes, bool ordinal,
                                   std::vector<std::string> class_names) {
  if (truth.empty())
    throw UsageError("cannot evaluate an empty set");
  if (truth.size() != predicted.size())
    throw UsageError("truth and prediction counts differ: " + std::to_string(truth.size()) +
                     " vs " + std::to_string(predicted.size()));
  if (num_classes < 1)
    throw UsageError("num_classes must be at least 1");
  if (class_names.empty())
    for (int k = 0; k < num_classes; ++k)
      class_names.push_back(std::to_string(k));
  if (static_cast<int>(class_names.size()) != num_classes)
    throw UsageError("class name count does not match num_classes");

  const auto K = static_cast<std::size_t>(num_classes);
  MetricsReport r;
  r.class_names = std::move(class_names);
  r.confusion.assign(K, std::vector<std::int64_t>(K, 0));
  r.ordinal = ordinal;
  std::int64_t exact = 0, near = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw UsageError("class index out of range at sample " + std::to_string(i));
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    exact += t == p;
    near += std::abs(t - p) <= 1;
  }
  r.samples = static_cast<std::int64_t>(truth.size());
  for (std::size_t k = 0; k < K; ++k) {
    std::int64_t row = 0;
    for (auto v : r.confusion[k])
      row += v;
    if (row > 0)
      r.recall.emplace_back(static_cast<double>(r.confusion[k][k]) / static_cast<double>(row));
    else
      r.recall.emplace_back(std::nullopt);
  }
  r.accuracy = static_cast<double>(exact) / static_cast<double>(r.samples);
  if (ordinal) {
    r.exact = r.accuracy;
    r.one_off = static_cast<double>(near) / static_cast<double>(r.samples);
  }
  return r;
}

MetricsReport evaluate(const Network<float> &net, const SampleStore &store,
                       const Manifest &manifest, const std::vector<std::size_t> &ids,
                       bool ordinal, int threads) {
  if (ids.empty())
    throw UsageError("cannot evaluate an empty set");
  const auto &spec = store.spec();
  const std::int64_t H = spec.crop_size.height, W = spec.crop_size.width;
  const auto plane = static_cast<std::size_t>(H * W);
  const int K = net.num_classes();
  if (K != manifest.num_classes())
    throw UsageError("network has " + std::to_string(K) + " outputs but the manifest has " +
                     std::to_string(manifest.num_classes()) + " classes");

  std::vector<int> truth(ids.size()), predicted(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto &label = manifest.records.at(ids[i]).label;
    if (!label)
      throw UsageError("evaluation record " + std::to_string(ids[i]) + " has no label");
    truth[i] = *label;
  }
  const std::size_t batches = (ids.size() + kEvalBatch - 1) / kEvalBatch;
  parallel_for(batches, threads, [&](std::size_t b) {
    const std::size_t begin = b * kEvalBatch;
    const std::size_t end = std::min(ids.size(), begin + kEvalBatch);
    std::vector<float> pixels((end - begin) * plane);
    for (std::size_t i = begin; i < end; ++i) {
      const Tensor view = eval_path(store.source(ids[i]), spec);
      std::copy(view.data().begin(), view.data().end(), pixels.begin() + (i - begin) * plane);
    }
    const Tensor batch(Shape{static_cast<std::int64_t>(end - begin), 1, H, W}, std::move(pixels));
    const Tensor probs = softmax(net.predict(batch));
    const auto p = probs.data();
    for (std::size_t i = begin; i < end; ++i)
      predicted[i] = argmax(p.subspan((i - begin) * static_cast<std::size_t>(K),
                                      static_cast<std::size_t>(K)));
  });
  return evaluate_predictions(truth, predicted, K, ordinal, manifest.class_names);
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty())
    throw UsageError("mean of an empty list");
  double sum = 0.0;
  for (double v : values)
    sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values)
    sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

std::string format_mean_std(const MeanStd &value, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f \xC2\xB1 %.*f", decimals, value.mean, decimals, value.std);
  return buf;
}

std::string format_report(const MetricsReport &report) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"truth \\ predicted"};
  for (const auto &name : report.class_names)
    header.push_back(name);
  header.push_back("recall%");
  cells.push_back(header);
  for (std::size_t k = 0; k < report.confusion.size(); ++k) {
    std::vector<std::string> row{report.class_names[k]};
    for (auto v : report.confusion[k])
      row.push_back(std::to_string(v));
    row.push_back(report.recall[k] ? percent(*report.recall[k]) : "-");
    cells.push_back(row);
  }
  std::string out = render(cells);
  out += "samples   " + std::to_string(report.samples) + '\n';
  out += "accuracy% " + percent(report.accuracy) + '\n';
  if (report.ordinal) {
    out += "exact%    " + percent(report.exact) + '\n';
    out += "one_off%  " + percent(report.one_off) + '\n';
  }
  return out;
}

std::string report_csv(const MetricsReport &report,
                       const std::map<std::string, std::string> &extra) {
  std::ostringstream out;
  out << "key,value\n";
  out << "task," << (report.ordinal ? "ordinal" : "classification") << '\n';
  out << "classes,";
  for (std::size_t k = 0; k < report.class_names.size(); ++k)
    out << (k ? ";" : "") << report.class_names[k];
  out << '\n';
  out << "samples," << report.samples << '\n';
  out << "accuracy," << exact_double(report.accuracy) << '\n';
  if (report.ordinal) {
    out << "exact," << exact_double(report.exact) << '\n';
    out << "one_off," << exact_double(report.one_off) << '\n';
  }
  for (std::size_t k = 0; k < report.confusion.size(); ++k) {
    out << "confusion." << k << ',';
    for (std::size_t j = 0; j < report.confusion[k].size(); ++j)
      out << (j ? ";" : "") << report.confusion[k][j];
    out << '\n';
  }
  for (std::size_t k = 0; k < report.recall.size(); ++k)
    out << "recall." << k << ',' << (report.recall[k] ? exact_double(*report.recall[k]) : "")
        << '\n';
  for (const auto &[key, value] : extra)
    out << "run." << key << ',' << value << '\n';
  return out.str();
}

void write_report_csv(const MetricsReport &report, const std::filesystem::path &path,
                      const std::map<std::string, std::string> &extra) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << report_csv(report, extra)))
    throw DataError("cannot write report: " + path.string());
}

MetricsReport read_report_csv(const std::filesystem::path &path,
                              std::map<std::string, std::string> *extra) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open report: " + path.string());
  std::map<std::string, std::string> fields;
  std::string line;
  std::getline(in, line);
  if (line != "key,value")
    throw DataError("report " + path.string() + " lacks the 'key,value' header");
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw DataError("report " + path.string() + ": malformed line '" + line + "'");
    fields[line.substr(0, comma)] = line.substr(comma + 1);
  }
  auto need = [&](const std::string &key) -> const std::string & {
    auto it = fields.find(key);
    if (it == fields.end())
      throw DataError("report " + path.string() + " is missing '" + key + "'");
    return it->second;
  };
  MetricsReport r;
  const auto &task = need("task");
  if (task != "ordinal" && task != "classification")
    throw DataError("report " + path.string() + " has unknown task '" + task + "'");
  r.ordinal = task == "ordinal";
  r.class_names = split_on(need("classes"), ';');
  const std::size_t K = r.class_names.size();
  r.samples = parse_int(need("samples"), "samples");
  r.accuracy = parse_double(need("accuracy"), "accuracy");
  if (r.ordinal) {
    r.exact = parse_double(need("exact"), "exact");
    r.one_off = parse_double(need("one_off"), "one_off");
  }
  for (std::size_t k = 0; k < K; ++k) {
    const std::string key = "confusion." + std::to_string(k);
    std::vector<std::int64_t> row;
    for (const auto &v : split_on(need(key), ';'))
      row.push_back(parse_int(v, key));
    if (row.size() != K)
      throw DataError("report " + path.string() + ": " + key + " has " +
                      std::to_string(row.size()) + " entries, expected " + std::to_string(K));
    r.confusion.push_back(std::move(row));
    const std::string rkey = "recall." + std::to_string(k);
    const auto &rv = need(rkey);
    r.recall.push_back(rv.empty() ? std::nullopt : std::optional<double>(parse_double(rv, rkey)));
  }
  if (extra) {
    extra->clear();
    for (const auto &[key, value] : fields)
      if (key.rfind("run.", 0) == 0)
        (*extra)[key.substr(4)] = value;
  }
  return r;
}

Table report_table(const std::vector<ComparisonRow> &rows) {
  if (rows.empty())
    throw UsageError("report_table needs at least one row");
  std::optional<bool> ordinal;
  std::vector<std::string> class_names;
  for (const auto &row : rows)
    for (const auto *rep : {&row.supervised, &row.semi_supervised}) {
      if (!*rep)
        continue;
      if (!ordinal) {
        ordinal = (*rep)->ordinal;
        class_names = (*rep)->class_names;
      } else if (*ordinal != (*rep)->ordinal) {
        throw UsageError("cannot tabulate ordinal and classification reports together");
      } else if (!*ordinal && (*rep)->class_names != class_names) {
        throw UsageError("cannot tabulate reports with different class tables");
      }
    }
  if (!ordinal)
    throw UsageError("report_table rows carry no reports");

  auto cell = [](const std::optional<MetricsReport> &sup, const std::optional<MetricsReport> &semi,
                 auto field) {
    auto one = [&](const std::optional<MetricsReport> &r) -> std::string {
      if (!r)
        return "-";
      const std::optional<double> v = field(*r);
      return v ? percent(*v) : "-";
    };
    return one(sup) + "/" + one(semi);
  };

  std::vector<std::vector<std::string>> cells;
  if (*ordinal) {
    cells.push_back({"fold", "exact%", "one_off%"});
    std::vector<double> ex_sup, ex_semi, off_sup, off_semi;
    for (const auto &row : rows) {
      cells.push_back({row.key,
                       cell(row.supervised, row.semi_supervised,
                            [](const MetricsReport &r) { return std::optional(r.exact); }),
                       cell(row.supervised, row.semi_supervised,
                            [](const MetricsReport &r) { return std::optional(r.one_off); })});
      if (row.supervised) {
        ex_sup.push_back(100.0 * row.supervised->exact);
        off_sup.push_back(100.0 * row.supervised->one_off);
      }
      if (row.semi_supervised) {
        ex_semi.push_back(100.0 * row.semi_supervised->exact);
        off_semi.push_back(100.0 * row.semi_supervised->one_off);
      }
    }
    if (rows.size() > 1) {
      auto agg = [](const std::vector<double> &a, const std::vector<double> &b) {
        return (a.empty() ? std::string("-") : format_mean_std(mean_std(a))) + "/" +
               (b.empty() ? std::string("-") : format_mean_std(mean_std(b)));
      };
      cells.push_back({"mean", agg(ex_sup, ex_semi), agg(off_sup, off_semi)});
    }
  } else {
    std::vector<std::string> header{"labeled", "unlabeled"};
    for (const auto &name : class_names)
      header.push_back(name + "%");
    header.push_back("ACC%");
    cells.push_back(header);
    for (const auto &row : rows) {
      std::vector<std::string> line{std::to_string(row.labeled), std::to_string(row.unlabeled)};
      for (std::size_t k = 0; k < class_names.size(); ++k)
        line.push_back(cell(row.supervised, row.semi_supervised,
                            [k](const MetricsReport &r) { return r.recall[k]; }));
      line.push_back(cell(row.supervised, row.semi_supervised,
                          [](const MetricsReport &r) { return std::optional(r.accuracy); }));
      cells.push_back(line);
    }
  }
  Table t;
  for (const auto &row : cells)
    t.csv += csv_line(row);
  t.text = render(cells);
  return t;
}

} // namespace selfens
