#include "selfens/datastore.hpp"
#include "selfens/errors.hpp"
#include "selfens/gradcheck.hpp"
#include "selfens/metrics.hpp"
#include "selfens/network.hpp"
#include "selfens/trainer.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

namespace py = pybind11;
using namespace selfens;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const FloatArray &a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> array_from(const Tensor &t) {
  py::array_t<float> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Image image_from(const FloatArray &a) {
  if (a.ndim() != 2 && !(a.ndim() == 3 && (a.shape(2) == 1 || a.shape(2) == 3)))
    throw UsageError("expected an [H, W] or [H, W, C] array with C in {1, 3}");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)),
            a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

int metadata_int(const Network<float> &net, const std::string &key, int fallback) {
  const auto it = net.metadata.find(key);
  return it == net.metadata.end() ? fallback : std::stoi(it->second);
}

py::dict epoch_dict(const EpochLog &log) {
  py::dict d;
  d["epoch"] = log.epoch;
  d["alpha"] = log.alpha;
  d["steps"] = log.steps;
  d["sup_loss"] = log.sup_loss;
  d["cons_loss"] = std::isnan(log.cons_loss) ? py::object(py::none()) : py::float_(log.cons_loss);
  d["total_loss"] = log.total_loss;
  d["eval"] = log.eval ? py::cast(*log.eval) : py::object(py::none());
  return d;
}

} // namespace

PYBIND11_MODULE(_selfens, m) {
  m.doc() = "Self-ensembling semi-supervised CNN training";

  static py::exception<Error> base(m, "SelfensError");
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<Network<float>>(m, "Network")
      .def_property_readonly("num_classes", &Network<float>::num_classes)
      .def("count_parameters", &Network<float>::count_parameters)
      .def("segment_parameter_counts", &Network<float>::segment_parameter_counts)
      .def("layer_descriptions",
           [](const Network<float> &net) {
             std::vector<std::string> out;
             for (const auto &l : net.layers())
               out.push_back(describe(l));
             return out;
           })
      .def(
          "forward_shapes",
          [](const Network<float> &net, const std::vector<std::int64_t> &input) {
            return net.forward_shapes(Tensor::zeros(input));
          },
          py::arg("input_shape"))
      .def(
          "predict",
          [](const Network<float> &net, const FloatArray &batch) {
            const Tensor x = tensor_from(batch);
            Tensor logits;
            {
              py::gil_scoped_release release;
              logits = net.predict(x);
            }
            return array_from(logits);
          },
          py::arg("batch"), "Eval-mode logits for a [B, 1, H, W] float32 batch.")
      .def_readwrite("metadata", &Network<float>::metadata)
      .def("copy", [](const Network<float> &net) { return Network<float>(net); });

  m.def("build_canonical", &build_canonical, py::arg("num_classes") = 2, py::arg("seed") = 0);
  m.def(
      "segment_parameter_counts",
      [](int num_classes) {
        std::vector<std::int64_t> out;
        for (const auto &l : canonical_layers(num_classes))
          if (const auto n = parameter_count(l))
            out.push_back(n);
        return out;
      },
      py::arg("num_classes") = 2);
  m.def("save_checkpoint", &save_checkpoint, py::arg("network"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  py::class_<Manifest>(m, "Manifest")
      .def_readonly("root", &Manifest::root)
      .def_readonly("class_names", &Manifest::class_names)
      .def_readonly("warnings", &Manifest::warnings)
      .def("__len__", [](const Manifest &mf) { return mf.records.size(); })
      .def("record",
           [](const Manifest &mf, std::size_t id) {
             if (id >= mf.records.size())
               throw py::index_error("record id out of range");
             const auto &r = mf.records[id];
             return py::make_tuple(r.path, r.label, r.subject);
           })
      .def("resolve", &Manifest::resolve);

  m.def("load_manifest", [](const std::filesystem::path &path, bool verify_images) {
    return load_manifest(path, ManifestOptions{verify_images});
  }, py::arg("path"), py::arg("verify_images") = true);
  m.def(
      "generate_synthetic",
      [](const std::filesystem::path &out_dir, int per_class, int size, std::uint64_t seed,
         int images_per_subject) {
        return generate_synthetic(out_dir, per_class, size, seed,
                                  SyntheticOptions{images_per_subject});
      },
      py::arg("out_dir"), py::arg("per_class"), py::arg("size") = 36, py::arg("seed") = 0,
      py::arg("images_per_subject") = 10);

  py::class_<SplitPlan>(m, "SplitPlan")
      .def_readonly("labeled", &SplitPlan::labeled)
      .def_readonly("unlabeled", &SplitPlan::unlabeled)
      .def_readonly("test", &SplitPlan::test)
      .def_readonly("budget", &SplitPlan::budget)
      .def_readonly("seed", &SplitPlan::seed)
      .def_readonly("stratify", &SplitPlan::stratify)
      .def("__eq__", [](const SplitPlan &a, const SplitPlan &b) { return a == b; });

  m.def("make_split", &make_split, py::arg("manifest"), py::arg("budget"), py::arg("seed") = 0,
        py::arg("stratify") = true, py::arg("test_fraction") = 0.3);
  m.def("save_plan", &save_plan, py::arg("plan"), py::arg("path"));
  m.def("load_plan", &load_plan, py::arg("path"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_static("preset", &TrainConfig::preset, py::arg("task"))
      .def_static("parse", [](const std::string &text) { return parse_config(text); })
      .def("set", [](TrainConfig &cfg, const std::string &key,
                     const std::string &value) { apply_setting(cfg, key, value); })
      .def("validate", &TrainConfig::validate)
      .def("to_text", [](const TrainConfig &cfg) { return to_text(cfg); })
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("crop_size", &TrainConfig::crop_size)
      .def_readwrite("source_size", &TrainConfig::source_size)
      .def_readwrite("eval_each_epoch", &TrainConfig::eval_each_epoch)
      .def_readwrite("ordinal", &TrainConfig::ordinal)
      .def("__eq__", [](const TrainConfig &a, const TrainConfig &b) { return a == b; })
      .def("__repr__", [](const TrainConfig &cfg) { return to_text(cfg); });

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("class_names", &MetricsReport::class_names)
      .def_readonly("confusion", &MetricsReport::confusion)
      .def_readonly("recall", &MetricsReport::recall)
      .def_readonly("accuracy", &MetricsReport::accuracy)
      .def_readonly("ordinal", &MetricsReport::ordinal)
      .def_readonly("exact", &MetricsReport::exact)
      .def_readonly("one_off", &MetricsReport::one_off)
      .def_readonly("samples", &MetricsReport::samples)
      .def("csv", [](const MetricsReport &r) { return report_csv(r); })
      .def("__eq__", [](const MetricsReport &a, const MetricsReport &b) { return a == b; })
      .def("__str__", &format_report);

  m.def(
      "perturb_pair",
      [](const FloatArray &image, int crop_size, std::uint64_t seed) {
        AugmentSpec spec = AugmentSpec::for_crop(crop_size);
        const Image src = resize(image_from(image), spec.source_size.width,
                                 spec.source_size.height);
        const auto [a, b] = perturb_pair(src, spec, Rng(seed));
        return py::make_tuple(array_from(a), array_from(b));
      },
      py::arg("image"), py::arg("crop_size") = 32, py::arg("seed") = 0,
      "Two augmented grayscale views of an image with values in [0, 1].");

  m.def(
      "train",
      [](const Manifest &manifest, const SplitPlan &plan, const TrainConfig &cfg,
         std::optional<std::filesystem::path> out_dir, int threads) {
        FitOptions opt;
        opt.out_dir = std::move(out_dir);
        opt.threads = threads;
        FitResult r;
        {
          py::gil_scoped_release release;
          r = fit(manifest, plan, cfg, opt);
        }
        py::dict d;
        py::list epochs;
        for (const auto &log : r.epochs)
          epochs.append(epoch_dict(log));
        d["final"] = std::move(r.final);
        d["best"] = std::move(r.best);
        d["best_epoch"] = r.best_epoch;
        d["epochs"] = epochs;
        return d;
      },
      py::arg("manifest"), py::arg("plan"), py::arg("config"), py::arg("out_dir") = py::none(),
      py::arg("threads") = 0);

  m.def(
      "evaluate",
      [](const Network<float> &net, const Manifest &manifest, const std::vector<std::size_t> &ids,
         bool ordinal, int threads) {
        const int crop = metadata_int(net, "crop_size", 128);
        const int source = metadata_int(net, "source_size", crop / 8 * 9);
        const AugmentSpec spec = AugmentSpec::degenerate({source, source}, {crop, crop});
        py::gil_scoped_release release;
        const SampleStore store(manifest, ids, spec, threads);
        return evaluate(net, store, manifest, ids, ordinal, threads);
      },
      py::arg("network"), py::arg("manifest"), py::arg("ids"), py::arg("ordinal") = false,
      py::arg("threads") = 0);

  m.def(
      "evaluate_predictions",
      [](const std::vector<int> &truth, const std::vector<int> &predicted, int num_classes,
         bool ordinal, std::vector<std::string> names) {
        return evaluate_predictions(truth, predicted, num_classes, ordinal, std::move(names));
      },
      py::arg("truth"), py::arg("predicted"), py::arg("num_classes"), py::arg("ordinal") = false,
      py::arg("class_names") = std::vector<std::string>{});

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int cases, double tolerance) {
        GradCheckOptions opt;
        opt.seed = seed;
        opt.cases_per_op = cases;
        opt.tolerance = tolerance;
        GradCheckReport r;
        {
          py::gil_scoped_release release;
          r = run_gradcheck(opt);
        }
        py::dict d;
        for (const auto &op : r.ops)
          d[py::str(op.op)] = py::make_tuple(op.max_rel_error, op.passed);
        return py::make_tuple(r.passed, r.max_rel_error, d);
      },
      py::arg("seed") = 0, py::arg("cases") = 100, py::arg("tolerance") = 1e-4,
      "Returns (passed, max_rel_error, {op: (max_rel_error, passed)}).");

  m.def(
      "mean_std",
      [](const std::vector<double> &v) {
        const auto ms = mean_std(v);
        return py::make_tuple(ms.mean, ms.std);
      },
      py::arg("values"));
  m.def(
      "format_mean_std",
      [](const std::vector<double> &v, int decimals) {
        return format_mean_std(mean_std(v), decimals);
      },
      py::arg("values"), py::arg("decimals") = 2);
}
