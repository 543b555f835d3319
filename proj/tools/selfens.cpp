// selfens: command-line front end.
#include "selfens/datastore.hpp"
#include "selfens/errors.hpp"
#include "selfens/gradcheck.hpp"
#include "selfens/metrics.hpp"
#include "selfens/network.hpp"
#include "selfens/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace selfens;

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

int fail(const std::string &kind, int code, const std::string &message) {
  std::cerr << "error: " << kind << ": " << one_line(message) << std::endl;
  return code;
}

std::string read_text(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text))
    throw DataError("cannot write " + path.string());
}

std::string join_argv(int argc, char **argv) {
  std::string out;
  for (int i = 0; i < argc; ++i)
    out += (i ? " " : "") + std::string(argv[i]);
  return out;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string metadata(const Network<float> &net, const std::string &key) {
  auto it = net.metadata.find(key);
  if (it == net.metadata.end())
    throw DataError("checkpoint lacks metadata '" + key + "'");
  return it->second;
}

int metadata_int(const Network<float> &net, const std::string &key) {
  const std::string v = metadata(net, key);
  try {
    return std::stoi(v);
  } catch (const std::exception &) {
    throw DataError("checkpoint metadata '" + key + "' is not an integer: '" + v + "'");
  }
}

AugmentSpec eval_spec(const Network<float> &net) {
  AugmentSpec spec = AugmentSpec::degenerate(
      {metadata_int(net, "source_size"), metadata_int(net, "source_size")},
      {metadata_int(net, "crop_size"), metadata_int(net, "crop_size")});
  spec.validate();
  return spec;
}

void check_classes(const Network<float> &net, const Manifest &manifest) {
  std::string names;
  for (std::size_t k = 0; k < manifest.class_names.size(); ++k)
    names += (k ? ";" : "") + manifest.class_names[k];
  const std::string trained = metadata(net, "class_names");
  if (trained != names)
    throw DataError("checkpoint classes '" + trained + "' do not match manifest classes '" +
                    names + "'");
}

const std::vector<std::size_t> &pick_set(const SplitPlan &plan, const std::string &set) {
  if (set == "test")
    return plan.test;
  if (set == "labeled")
    return plan.labeled;
  if (set == "unlabeled")
    return plan.unlabeled;
  throw UsageError("unknown evaluation set '" + set + "' (test, labeled or unlabeled)");
}

struct RunReport {
  fs::path dir;
  MetricsReport report;
  std::map<std::string, std::string> extra;
};

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Self-ensemble semi-supervised training"};
  app.require_subcommand(1, 1);

  // synth-gen
  auto *synth = app.add_subcommand("synth-gen", "Write a synthetic two-class corpus");
  fs::path synth_out;
  int per_class = 0, synth_size = 36, per_subject = 10;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--per-class", per_class, "Images per class")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--size", synth_size, "Image side in pixels")->capture_default_str();
  synth->add_option("--images-per-subject", per_subject, "Images sharing one subject id")
      ->capture_default_str();

  // split
  auto *split = app.add_subcommand("split", "Make a labeled/unlabeled/test split");
  fs::path split_manifest, split_out;
  std::size_t budget = 0;
  std::uint64_t split_seed = 0;
  bool no_stratify = false;
  double test_fraction = 0.3;
  split->add_option("--manifest", split_manifest, "Manifest CSV")->required();
  split->add_option("--budget", budget, "Labeled training samples")->required();
  split->add_option("--seed", split_seed, "Split seed");
  split->add_option("--out", split_out, "Plan file to write")->required();
  split->add_flag("--no-stratify", no_stratify, "Draw the labeled set without class balancing");
  split->add_option("--test-fraction", test_fraction, "Share of labeled records held out")
      ->capture_default_str();

  // train
  auto *train = app.add_subcommand("train", "Train a network and write a run directory");
  fs::path train_manifest, train_plan, train_config, train_out;
  std::vector<std::string> overrides;
  std::string fold;
  train->add_option("--manifest", train_manifest, "Manifest CSV")->required();
  train->add_option("--plan", train_plan, "Split plan")->required();
  train->add_option("--config", train_config, "Config file (key = value lines)");
  train->add_option("--out-dir", train_out, "Run directory")->required();
  train->add_option("--set", overrides, "Override a config key: --set key=value");
  auto *opt_alpha = train->add_option("--alpha", "Consistency weight");
  auto *opt_epochs = train->add_option("--epochs", "Epoch count");
  auto *opt_seed = train->add_option("--seed", "Training seed");
  auto *opt_lr = train->add_option("--learning-rate", "Adam learning rate");
  auto *opt_batch = train->add_option("--batch-size", "Batch size");
  train->add_option("--fold", fold, "Fold label recorded in the report");

  // eval
  auto *eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  fs::path eval_ckpt, eval_manifest, eval_plan, eval_out;
  bool eval_ordinal = false, eval_csv = false;
  std::string eval_set = "test";
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "Manifest CSV")->required();
  eval->add_option("--plan", eval_plan, "Split plan")->required();
  eval->add_flag("--ordinal", eval_ordinal, "Report exact and one-off accuracy");
  eval->add_option("--set", eval_set, "test, labeled or unlabeled")->capture_default_str();
  eval->add_option("--out", eval_out, "Write the report CSV here");
  eval->add_flag("--csv", eval_csv, "Print the report CSV instead of the text table");

  // paramcount
  auto *paramcount = app.add_subcommand("paramcount", "Print per-segment parameter counts");
  int classes = 2;
  paramcount->add_option("--classes", classes, "Number of classes")->capture_default_str();

  // gradcheck
  auto *gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  GradCheckOptions gc;
  gradcheck->add_option("--seed", gc.seed, "Case seed");
  gradcheck->add_option("--cases", gc.cases_per_op, "Cases per op")->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance, "Relative error bound")
      ->capture_default_str();

  // report
  auto *report = app.add_subcommand("report", "Compare run directories");
  std::vector<fs::path> runs;
  fs::path table_csv;
  report->add_option("--runs", runs, "Run directories")->required();
  report->add_option("--csv", table_csv, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    return fail("usage_error", 1, e.what());
  }

  try {
    if (*synth) {
      SyntheticOptions so;
      so.images_per_subject = per_subject;
      const Manifest m = generate_synthetic(synth_out, per_class, synth_size, synth_seed, so);
      std::cout << "wrote " << m.records.size() << " images and "
                << (synth_out / "manifest.csv").string() << '\n';
    } else if (*split) {
      const Manifest m = load_manifest(split_manifest);
      for (const auto &w : m.warnings)
        std::cerr << "warning: " << w << '\n';
      const SplitPlan plan = make_split(m, budget, split_seed, !no_stratify, test_fraction);
      save_plan(plan, split_out);
      std::cout << "labeled " << plan.labeled.size() << " unlabeled " << plan.unlabeled.size()
                << " test " << plan.test.size() << '\n';
    } else if (*train) {
      TrainConfig cfg = train_config.empty() ? TrainConfig{} : load_config(train_config);
      for (const auto &kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw UsageError("--set expects key=value, got '" + kv + "'");
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (*opt_alpha)
        apply_setting(cfg, "alpha", opt_alpha->as<std::string>());
      if (*opt_epochs)
        apply_setting(cfg, "epochs", opt_epochs->as<std::string>());
      if (*opt_seed)
        apply_setting(cfg, "seed", opt_seed->as<std::string>());
      if (*opt_lr)
        apply_setting(cfg, "learning_rate", opt_lr->as<std::string>());
      if (*opt_batch)
        apply_setting(cfg, "batch_size", opt_batch->as<std::string>());
      cfg.validate();

      const Manifest m = load_manifest(train_manifest);
      for (const auto &w : m.warnings)
        std::cerr << "warning: " << w << '\n';
      const SplitPlan plan = load_plan(train_plan);
      fs::create_directories(train_out);

      std::string snapshot = "# command: " + join_argv(argc, argv) + '\n';
      if (!train_config.empty()) {
        snapshot += "# config file " + train_config.string() + ":\n";
        std::istringstream original(read_text(train_config));
        std::string line;
        while (std::getline(original, line))
          snapshot += "#   " + line + '\n';
      }
      snapshot += "# effective settings:\n" + to_text(cfg);
      write_text(train_out / "config.snapshot", snapshot);

      FitOptions fo;
      fo.out_dir = train_out;
      fo.on_epoch = [](const EpochLog &log) { std::cout << epoch_csv_row(log) << std::endl; };
      const FitResult result = fit(m, plan, cfg, fo);

      const SampleStore store(m, plan.test, cfg.augment_spec());
      std::map<std::string, std::string> extra{
          {"alpha", format_number(cfg.alpha)},
          {"labeled", std::to_string(plan.labeled.size())},
          {"unlabeled", std::to_string(plan.unlabeled.size())},
          {"best_epoch", std::to_string(result.best_epoch)},
          {"checkpoint", "best.ckpt"}};
      if (!fold.empty())
        extra["fold"] = fold;
      if (plan.test.empty()) {
        std::cerr << "warning: the plan has no test records; report.csv not written\n";
      } else {
        const MetricsReport r = evaluate(result.best, store, m, plan.test, cfg.ordinal);
        write_report_csv(r, train_out / "report.csv", extra);
        std::cout << format_report(r);
      }
    } else if (*eval) {
      const Network<float> net = load_checkpoint(eval_ckpt);
      const Manifest m = load_manifest(eval_manifest);
      const SplitPlan plan = load_plan(eval_plan);
      validate_plan(plan, m);
      check_classes(net, m);
      const auto &ids = pick_set(plan, eval_set);
      const SampleStore store(m, ids, eval_spec(net));
      const MetricsReport r = evaluate(net, store, m, ids, eval_ordinal);
      if (!eval_out.empty())
        write_report_csv(r, eval_out);
      if (eval_csv) {
        std::cout << report_csv(r);
      } else {
        std::cout << format_report(r);
      }
    } else if (*paramcount) {
      const auto layers = canonical_layers(classes);
      std::int64_t total = 0;
      for (const auto &l : layers) {
        const auto n = parameter_count(l);
        total += n;
        if (n > 0)
          std::cout << "segment " << n << "  " << describe(l) << '\n';
      }
      std::cout << "total " << total << '\n';
    } else if (*gradcheck) {
      const GradCheckReport r = run_gradcheck(gc);
      for (const auto &op : r.ops) {
        char line[160];
        std::snprintf(line, sizeof line, "%-26s cases %3d  max_rel_err %.3e  skipped %d  %s",
                      op.op.c_str(), op.cases, op.max_rel_error, op.skipped,
                      op.passed ? "ok" : "FAIL");
        std::cout << line << '\n';
      }
      std::cout << "total cases " << r.total_cases << ", max_rel_err " << r.max_rel_error
                << (r.passed ? ", passed" : ", FAILED") << '\n';
      if (!r.passed)
        return fail("numeric_error", 3,
                    "gradient check exceeded tolerance " + std::to_string(gc.tolerance));
    } else if (*report) {
      std::vector<RunReport> loaded;
      for (const auto &dir : runs) {
        RunReport rr;
        rr.dir = dir;
        rr.report = read_report_csv(dir / "report.csv", &rr.extra);
        if (!rr.extra.count("alpha"))
          throw DataError("run " + dir.string() + " report lacks its alpha");
        loaded.push_back(std::move(rr));
      }
      std::vector<ComparisonRow> rows;
      std::map<std::string, std::size_t> index;
      for (const auto &rr : loaded) {
        const bool ordinal = rr.report.ordinal;
        std::string key;
        if (ordinal)
          key = rr.extra.count("fold") ? rr.extra.at("fold") : rr.dir.filename().string();
        else
          key = rr.extra.count("labeled") ? rr.extra.at("labeled") : "?";
        auto it = index.find(key);
        if (it == index.end()) {
          it = index.emplace(key, rows.size()).first;
          ComparisonRow row;
          row.key = key;
          if (rr.extra.count("labeled"))
            row.labeled = std::stoull(rr.extra.at("labeled"));
          if (rr.extra.count("unlabeled"))
            row.unlabeled = std::stoull(rr.extra.at("unlabeled"));
          rows.push_back(row);
        }
        auto &row = rows[it->second];
        const bool supervised = std::stod(rr.extra.at("alpha")) == 0.0;
        auto &slot = supervised ? row.supervised : row.semi_supervised;
        if (slot)
          throw UsageError("two " + std::string(supervised ? "supervised" : "semi-supervised") +
                           " runs share row '" + key + "'");
        slot = rr.report;
        if (!supervised)
          row.unlabeled = std::max<std::size_t>(
              row.unlabeled,
              rr.extra.count("unlabeled") ? std::stoull(rr.extra.at("unlabeled")) : 0);
      }
      if (!loaded.empty() && !loaded.front().report.ordinal)
        std::stable_sort(rows.begin(), rows.end(),
                         [](const ComparisonRow &a, const ComparisonRow &b) {
                           return a.labeled < b.labeled;
                         });
      const Table t = report_table(rows);
      std::cout << t.text;
      if (!table_csv.empty())
        write_text(table_csv, t.csv);
    }
  } catch (const Error &e) {
    return fail(e.kind(), e.exit_code(), e.what());
  } catch (const fs::filesystem_error &e) {
    return fail("data_error", 2, e.what());
  } catch (const std::exception &e) {
    return fail("internal_error", 1, e.what());
  }
  return 0;
}
