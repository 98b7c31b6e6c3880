#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmpop/bundle.hpp"
#include "mmpop/cli.hpp"
#include "mmpop/config.hpp"
#include "mmpop/dataset.hpp"
#include "mmpop/ensemble.hpp"
#include "mmpop/errors.hpp"
#include "mmpop/metrics.hpp"

namespace py = pybind11;
using namespace mmpop;

namespace {

Metric metric_from(const std::string& name) {
  for (Metric m : kMetrics) {
    if (metric_name(m) == name) return m;
  }
  throw UsageError("unknown metric '" + name + "'");
}

py::dict targets_dict(const PopularityTargets& t) {
  py::dict d;
  for (Metric m : kMetrics) d[py::str(std::string(metric_name(m)))] = t.get(m);
  return d;
}

py::object json_loads(const std::string& text) {
  return py::module_::import("json").attr("loads")(text);
}

}  // namespace

PYBIND11_MODULE(_mmpop, m) {
  m.doc() = "Retrieval-augmented multi-modal popularity prediction";

  auto usage = py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  (void)usage;

  py::class_<VideoRecord>(m, "VideoRecord")
      .def(py::init<>())
      .def_readwrite("video_id", &VideoRecord::video_id)
      .def_readwrite("author_id", &VideoRecord::author_id)
      .def_readwrite("playable", &VideoRecord::playable)
      .def_property(
          "embeddings",
          [](const VideoRecord& r) {
            py::dict d;
            for (Modality mod : kModalities) {
              const auto& e = r.modalities[static_cast<std::size_t>(mod)];
              d[py::str(std::string(modality_name(mod)))] = e ? py::cast(*e) : py::none();
            }
            return d;
          },
          [](VideoRecord& r, const py::dict& d) {
            for (Modality mod : kModalities) {
              const std::string key(modality_name(mod));
              auto& slot = r.modalities[static_cast<std::size_t>(mod)];
              slot.reset();
              if (d.contains(key) && !d[key.c_str()].is_none()) {
                slot = d[key.c_str()].cast<Embedding>();
              }
            }
          })
      .def_property(
          "targets",
          [](const VideoRecord& r) -> py::object {
            if (!r.targets) return py::none();
            return targets_dict(*r.targets);
          },
          [](VideoRecord& r, const py::object& o) {
            if (o.is_none()) {
              r.targets.reset();
              return;
            }
            PopularityTargets t;
            auto d = o.cast<py::dict>();
            for (Metric mt : kMetrics) {
              t.get(mt) = d[py::str(std::string(metric_name(mt)))].cast<std::uint64_t>();
            }
            r.targets = t;
          })
      .def_property_readonly("available_count", &VideoRecord::available_count)
      .def("__repr__", [](const VideoRecord& r) {
        return "<VideoRecord " + r.video_id + " author=" + r.author_id + ">";
      });

  py::class_<Manifest>(m, "Manifest")
      .def(py::init<>())
      .def_readwrite("dims", &Manifest::dims)
      .def_readwrite("records", &Manifest::records)
      .def("__len__", [](const Manifest& mf) { return mf.records.size(); });

  m.def("load_manifest", &load_manifest, py::arg("path"));
  m.def("save_manifest", &save_manifest, py::arg("path"), py::arg("manifest"));
  m.def("filter_playable", &filter_playable, py::arg("records"));
  m.def(
      "summarize",
      [](const Manifest& mf) {
        const auto r = summarize(mf);
        py::dict d;
        d["dims"] = r.dims;
        d["total"] = r.total;
        d["playable"] = r.playable;
        d["labeled"] = r.labeled;
        py::dict missing;
        for (Modality mod : kModalities) {
          missing[py::str(std::string(modality_name(mod)))] = r.missing[static_cast<std::size_t>(mod)];
        }
        d["missing"] = missing;
        return d;
      },
      py::arg("manifest"));

  m.def(
      "generate_synthetic",
      [](std::size_t videos, std::size_t authors, std::uint64_t seed, double noise,
         ModalityDims dims, std::size_t unplayable, double missing_rate, std::size_t unlabeled) {
        SynthConfig c;
        c.n_videos = videos;
        c.n_authors = authors;
        c.seed = seed;
        c.noise = noise;
        c.dims = dims;
        c.n_unplayable = unplayable;
        c.missing_rate = missing_rate;
        c.n_unlabeled = unlabeled;
        return generate_synthetic(c);
      },
      py::arg("videos") = 1500, py::arg("authors") = 15, py::arg("seed") = 42,
      py::arg("noise") = 0.05, py::arg("dims") = ModalityDims{32, 32, 32},
      py::arg("unplayable") = 0, py::arg("missing_rate") = 0.0, py::arg("unlabeled") = 0);

  m.def(
      "split",
      [](const std::vector<VideoRecord>& records, double ratio, std::uint64_t seed) {
        auto s = split(records, ratio, seed);
        return py::make_tuple(s.train, s.val);
      },
      py::arg("records"), py::arg("ratio") = 0.8, py::arg("seed") = 42);

  m.def("mse", [](const std::vector<double>& p, const std::vector<double>& t) { return mse(p, t); },
        py::arg("preds"), py::arg("targets"));
  m.def("plcc", [](const std::vector<double>& p, const std::vector<double>& t) { return plcc(p, t); },
        py::arg("preds"), py::arg("targets"),
        "Pearson correlation; None when either side has zero variance.");

  m.def("default_config", [] { return json_loads(RunConfig{}.to_json()); });

  py::class_<ensemble::TrainedEnsemble, std::shared_ptr<ensemble::TrainedEnsemble>>(m, "Ensemble")
      .def_static("load", [](const std::filesystem::path& p) {
        return std::make_shared<ensemble::TrainedEnsemble>(load_bundle(p));
      })
      .def("save", [](const ensemble::TrainedEnsemble& e, const std::filesystem::path& p) {
        save_bundle(e, p);
      })
      .def_property_readonly("config", [](const ensemble::TrainedEnsemble& e) {
        return json_loads(e.config.to_json());
      })
      .def_property_readonly("author_models", [](const ensemble::TrainedEnsemble& e) {
        std::vector<std::string> out;
        for (const auto& [a, vm] : e.per_author) out.push_back(a);
        return out;
      })
      .def(
          "selection",
          [](const ensemble::TrainedEnsemble& e, const std::string& metric) {
            py::dict d;
            const auto mt = metric_from(metric);
            for (const auto& [a, s] : e.scores[static_cast<std::size_t>(mt)]) {
              d[py::str(a)] = std::string(ensemble::variant_name(e.select(mt, a)));
            }
            return d;
          },
          py::arg("metric"))
      .def(
          "predict",
          [](const ensemble::TrainedEnsemble& e, const std::vector<VideoRecord>& records) {
            std::vector<ensemble::PredictionRow> rows;
            {
              py::gil_scoped_release release;
              rows = ensemble::predict_rows(records, e);
            }
            py::list out;
            for (const auto& r : rows) out.append(py::make_tuple(r.video_id, targets_dict(r.predicted)));
            return out;
          },
          py::arg("records"))
      .def(
          "evaluate",
          [](const ensemble::TrainedEnsemble& e, const std::vector<VideoRecord>& records) {
            std::string text;
            {
              py::gil_scoped_release release;
              text = emit_report(evaluate(e, records), ReportFormat::structured);
            }
            return json_loads(text);
          },
          py::arg("records"));

  m.def(
      "train",
      [](const std::vector<VideoRecord>& train, const std::vector<VideoRecord>& val,
         const ModalityDims& dims, const py::object& config,
         const std::vector<VideoRecord>& unlabeled) {
        RunConfig c;
        if (!config.is_none()) {
          auto dumps = py::module_::import("json").attr("dumps");
          c = RunConfig::from_json(dumps(config).cast<std::string>());
        }
        py::gil_scoped_release release;
        return std::make_shared<ensemble::TrainedEnsemble>(
            ensemble::train_variants(train, val, unlabeled, dims, c));
      },
      py::arg("train"), py::arg("val"), py::arg("dims"), py::arg("config") = py::none(),
      py::arg("unlabeled") = std::vector<VideoRecord>{});

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return cli::run(args);
      },
      py::arg("args"), "Runs the mmpop command line with `args` and returns its exit code.");
}
