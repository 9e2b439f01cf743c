// Python face of the library: configs, scene synthesis, the model, training
// and metrics, all exchanged as numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mmcd/checkpoint.hpp"
#include "mmcd/errors.hpp"
#include "mmcd/gradcheck.hpp"
#include "mmcd/graph.hpp"
#include "mmcd/metrics.hpp"
#include "mmcd/model.hpp"
#include "mmcd/rng.hpp"
#include "mmcd/scene.hpp"
#include "mmcd/trainer.hpp"

namespace py = pybind11;
using namespace py::literals;
using namespace mmcd;

namespace {

using CArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using CIntArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const CArray& a) {
    Shape s(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) s[static_cast<std::size_t>(i)] = a.shape(i);
    Tensor t(s);
    std::copy_n(a.data(), t.numel(), t.data());
    return t;
}

py::array_t<double> numpy_from(const Tensor& t) {
    std::vector<py::ssize_t> s(t.shape().begin(), t.shape().end());
    py::array_t<double> a(s);
    std::copy_n(t.data(), t.numel(), a.mutable_data());
    return a;
}

IntTensor int_tensor_from(const CIntArray& a) {
    Shape s(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) s[static_cast<std::size_t>(i)] = a.shape(i);
    IntTensor t(s);
    std::copy_n(a.data(), t.numel(), t.v.begin());
    return t;
}

py::array_t<std::int32_t> numpy_from(const IntTensor& t) {
    std::vector<py::ssize_t> s(t.shape.begin(), t.shape.end());
    py::array_t<std::int32_t> a(s);
    std::copy_n(t.v.data(), t.numel(), a.mutable_data());
    return a;
}

}  // namespace

PYBIND11_MODULE(mmcd, mod) {
    mod.doc() = "bitemporal optical/SAR change detection toolkit";
    mod.attr("__version__") = "0.1.0";
    mod.attr("NUM_CHANGE_CLASSES") = scene::kNumChangeClasses;

    const auto err = py::register_exception<Error>(mod, "Error", PyExc_RuntimeError);
    const auto invalid = py::register_exception<InvalidArgument>(mod, "InvalidArgument", err.ptr());
    py::register_exception<ShapeError>(mod, "ShapeError", invalid.ptr());
    py::register_exception<InvalidLabel>(mod, "InvalidLabel", invalid.ptr());
    py::register_exception<ConflictError>(mod, "ConflictError", invalid.ptr());
    py::register_exception<IoError>(mod, "IoError", err.ptr());
    py::register_exception<IncompatibleCheckpoint>(mod, "IncompatibleCheckpoint", err.ptr());
    py::register_exception<TrainingDiverged>(mod, "TrainingDiverged", err.ptr());

    mod.def("derive_seed", &derive_seed, "seed"_a, "tag"_a, "index"_a = 0);

    // --- scene -----------------------------------------------------------
    py::class_<scene::SceneConfig>(mod, "SceneConfig")
        .def(py::init<>())
        .def_readwrite("size", &scene::SceneConfig::size)
        .def_readwrite("buildings_min", &scene::SceneConfig::buildings_min)
        .def_readwrite("buildings_max", &scene::SceneConfig::buildings_max)
        .def_readwrite("roads_min", &scene::SceneConfig::roads_min)
        .def_readwrite("roads_max", &scene::SceneConfig::roads_max)
        .def_readwrite("water_min", &scene::SceneConfig::water_min)
        .def_readwrite("water_max", &scene::SceneConfig::water_max)
        .def_readwrite("building_side_min", &scene::SceneConfig::building_side_min)
        .def_readwrite("building_side_max", &scene::SceneConfig::building_side_max)
        .def_readwrite("road_half_width_min", &scene::SceneConfig::road_half_width_min)
        .def_readwrite("road_half_width_max", &scene::SceneConfig::road_half_width_max)
        .def_readwrite("water_radius_min", &scene::SceneConfig::water_radius_min)
        .def_readwrite("water_radius_max", &scene::SceneConfig::water_radius_max)
        .def_readwrite("events_min", &scene::SceneConfig::events_min)
        .def_readwrite("events_max", &scene::SceneConfig::events_max)
        .def_readwrite("optical_noise", &scene::SceneConfig::optical_noise)
        .def_readwrite("speckle_variance", &scene::SceneConfig::speckle_variance);

    py::class_<scene::DatasetSample>(mod, "Sample")
        .def_readonly("id", &scene::DatasetSample::id)
        .def_property_readonly("optical",
                               [](const scene::DatasetSample& s) { return numpy_from(s.optical); })
        .def_property_readonly("sar",
                               [](const scene::DatasetSample& s) { return numpy_from(s.sar); })
        .def_property_readonly("label",
                               [](const scene::DatasetSample& s) -> py::object {
                                   if (s.label.numel() == 0) return py::none();
                                   return numpy_from(s.label);
                               })
        .def("__repr__", [](const scene::DatasetSample& s) {
            return "<Sample id='" + s.id + "' " + std::to_string(s.optical.dim(1)) + "x" +
                   std::to_string(s.optical.dim(2)) + ">";
        });

    mod.def(
        "sample_from_arrays",
        [](const CArray& optical, const CArray& sar, std::optional<CIntArray> label,
           const std::string& id) {
            scene::DatasetSample s;
            s.id = id;
            s.optical = tensor_from(optical);
            s.sar = tensor_from(sar);
            if (label) s.label = int_tensor_from(*label);
            return s;
        },
        "optical"_a, "sar"_a, "label"_a = py::none(), "id"_a = "");

    mod.def(
        "generate_sample",
        [](const scene::SceneConfig& cfg, std::uint64_t seed) {
            scene::Sample s;
            {
                py::gil_scoped_release rel;
                s = scene::generate_sample(cfg, seed);
            }
            py::dict d;
            d["before"] = numpy_from(s.before);
            d["after"] = numpy_from(s.after);
            d["optical"] = numpy_from(s.optical);
            d["sar"] = numpy_from(s.sar);
            d["label"] = numpy_from(s.label);
            return d;
        },
        "config"_a = scene::SceneConfig{}, "seed"_a = 0);

    mod.def(
        "build_dataset",
        [](const std::string& root, long count, const scene::SceneConfig& cfg,
           std::array<double, 3> splits, std::uint64_t seed) {
            scene::Manifest man;
            {
                py::gil_scoped_release rel;
                man = scene::build_dataset(root, count, cfg, splits, seed);
            }
            py::dict d;
            d["seed"] = man.seed;
            d["count"] = man.count;
            d["size"] = man.size;
            d["split_sizes"] = man.split_sizes;
            py::list entries;
            for (const auto& e : man.samples)
                entries.append(py::dict("id"_a = e.id, "split"_a = e.split, "seed"_a = e.seed));
            d["samples"] = entries;
            return d;
        },
        "root"_a, "count"_a, "config"_a = scene::SceneConfig{},
        "splits"_a = std::array<double, 3>{0.7, 0.15, 0.15}, "seed"_a = 0);

    mod.def(
        "load_split",
        [](const std::string& root, const std::string& split) {
            py::gil_scoped_release rel;
            return scene::load_split(root, split);
        },
        "root"_a, "split"_a);
    mod.def("load_sample_dir", &scene::load_sample_dir, "dir"_a);

    // --- model -----------------------------------------------------------
    py::class_<model::ModelConfig>(mod, "ModelConfig")
        .def(py::init<>())
        .def_static("variant", &model::ModelConfig::variant, "name"_a)
        .def_static("parse_json", &model::ModelConfig::parse_json, "text"_a)
        .def_readwrite("tile_size", &model::ModelConfig::tile_size)
        .def_readwrite("base_channels", &model::ModelConfig::base_channels)
        .def_readwrite("depths", &model::ModelConfig::depths)
        .def_readwrite("window", &model::ModelConfig::window)
        .def_readwrite("adapter_reduction", &model::ModelConfig::adapter_reduction)
        .def_readwrite("mlp_ratio", &model::ModelConfig::mlp_ratio)
        .def_readwrite("decoder_channels", &model::ModelConfig::decoder_channels)
        .def_readwrite("num_classes", &model::ModelConfig::num_classes)
        .def_readwrite("connectivity", &model::ModelConfig::connectivity)
        .def_readwrite("use_fim", &model::ModelConfig::use_fim)
        .def_readwrite("use_gsfm", &model::ModelConfig::use_gsfm)
        .def_readwrite("use_pgffm", &model::ModelConfig::use_pgffm)
        .def_readwrite("concat_fusion", &model::ModelConfig::concat_fusion)
        .def_readwrite("prior_seed", &model::ModelConfig::prior_seed)
        .def("variant_name", &model::ModelConfig::variant_name)
        .def("validate", &model::ModelConfig::validate)
        .def("canonical_json", &model::ModelConfig::canonical_json)
        .def("hash", &model::ModelConfig::hash)
        .def("__repr__", [](const model::ModelConfig& c) {
            return "<ModelConfig " + c.variant_name() + " tile=" + std::to_string(c.tile_size) + ">";
        });

    py::class_<model::Model>(mod, "Model")
        .def(py::init<model::ModelConfig>(), "config"_a)
        .def("initialize", &model::Model::initialize, "seed"_a)
        .def_property_readonly("config", [](const model::Model& m) { return m.cfg; })
        .def("stage_names", &model::Model::stage_names)
        .def("parameter_count", &model::Model::parameter_count, "trainable_only"_a = false)
        .def(
            "forward",
            [](model::Model& m, const CArray& optical, const CArray& sar, bool training) {
                const Tensor o = tensor_from(optical), s = tensor_from(sar);
                Tensor out;
                {
                    py::gil_scoped_release rel;
                    Graph g;
                    out = g.val(m.forward(g, o, s, training));
                }
                return numpy_from(out);
            },
            "optical"_a, "sar"_a, "training"_a = false)
        .def(
            "forward_gates",
            [](model::Model& m, const CArray& optical, const CArray& sar) {
                const Tensor o = tensor_from(optical), s = tensor_from(sar);
                model::ForwardTrace trace;
                {
                    py::gil_scoped_release rel;
                    Graph g;
                    m.forward(g, o, s, false, &trace);
                }
                py::list maps;
                for (const Tensor& gmap : trace.gates)
                    maps.append(numpy_from(gmap.reshaped({gmap.dim(2), gmap.dim(3)})));
                return maps;
            },
            "optical"_a, "sar"_a)
        .def(
            "save_checkpoint",
            [](model::Model& m, const std::string& path) {
                save_checkpoint(path, m.cfg.hash(), m.leaves());
            },
            "path"_a)
        .def(
            "load_checkpoint",
            [](model::Model& m, const std::string& path) {
                load_checkpoint(path, m.cfg.hash(), m.leaves());
            },
            "path"_a)
        .def("save_prior_weights", &model::Model::save_prior_weights, "path"_a)
        .def("load_prior_weights", &model::Model::load_prior_weights, "path"_a);

    // --- training and metrics ---------------------------------------------
    py::class_<train::TrainConfig>(mod, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("iterations", &train::TrainConfig::iterations)
        .def_readwrite("batch_size", &train::TrainConfig::batch_size)
        .def_readwrite("lr", &train::TrainConfig::lr)
        .def_readwrite("val_every", &train::TrainConfig::val_every)
        .def_readwrite("checkpoint_every", &train::TrainConfig::checkpoint_every)
        .def_readwrite("seed", &train::TrainConfig::seed)
        .def_readwrite("class_weighting", &train::TrainConfig::class_weighting)
        .def("validate", &train::TrainConfig::validate);

    py::class_<train::FitResult>(mod, "FitResult")
        .def_readonly("iterations", &train::FitResult::iterations)
        .def_readonly("final_loss", &train::FitResult::final_loss)
        .def_readonly("final_val_miou", &train::FitResult::final_val_miou)
        .def_readonly("checkpoint_path", &train::FitResult::checkpoint_path);

    py::class_<metrics::Report>(mod, "Report")
        .def_readonly("oa", &metrics::Report::oa)
        .def_readonly("miou", &metrics::Report::miou)
        .def_readonly("iou_per_class", &metrics::Report::iou_per_class)
        .def_readonly("precision_c", &metrics::Report::precision_c)
        .def_readonly("recall_c", &metrics::Report::recall_c)
        .def_readonly("f1_bcd", &metrics::Report::f1_bcd)
        .def_readonly("f1_clf", &metrics::Report::f1_clf)
        .def_readonly("pixel_total", &metrics::Report::pixel_total)
        .def("to_json", [](const metrics::Report& r) { return metrics::report_json(r); })
        .def("__repr__", [](const metrics::Report& r) {
            return "<Report oa=" + std::to_string(r.oa) + " miou=" + std::to_string(r.miou) + ">";
        });

    mod.def("class_weights", &train::class_weights, "samples"_a, "num_classes"_a,
            "mode"_a = "inverse");

    mod.def(
        "fit",
        [](model::Model& m, const std::vector<scene::DatasetSample>& train_s,
           const std::vector<scene::DatasetSample>& val_s, const train::TrainConfig& cfg,
           const std::string& checkpoint_path, std::optional<std::string> log_path) {
            std::ofstream log;
            std::ostream* lp = nullptr;
            if (log_path) {
                log.open(*log_path, std::ios::binary);
                if (!log) throw IoError("cannot write " + *log_path);
                lp = &log;
            }
            py::gil_scoped_release rel;
            return train::fit(m, train_s, val_s, cfg, checkpoint_path, lp);
        },
        "model"_a, "train"_a, "val"_a = std::vector<scene::DatasetSample>{},
        "config"_a = train::TrainConfig{}, "checkpoint_path"_a = "", "log_path"_a = py::none());

    mod.def(
        "evaluate",
        [](model::Model& m, const std::vector<scene::DatasetSample>& samples, long batch_size) {
            py::gil_scoped_release rel;
            return train::evaluate(m, samples, batch_size);
        },
        "model"_a, "samples"_a, "batch_size"_a = 4);

    mod.def(
        "predict_labels",
        [](model::Model& m, const scene::DatasetSample& s) {
            IntTensor out;
            {
                py::gil_scoped_release rel;
                out = train::predict_labels(m, s);
            }
            return numpy_from(out);
        },
        "model"_a, "sample"_a);

    mod.def(
        "predict_logits",
        [](model::Model& m, const scene::DatasetSample& s) {
            Tensor out;
            {
                py::gil_scoped_release rel;
                out = train::predict_logits(m, s);
            }
            return numpy_from(out);
        },
        "model"_a, "sample"_a);

    // --- gradient checks ----------------------------------------------------
    mod.def(
        "run_grad_checks",
        [](std::uint64_t seed) {
            std::vector<train::GradCheckCase> cases;
            {
                py::gil_scoped_release rel;
                cases = train::run_grad_checks(seed);
            }
            py::list out;
            for (const auto& c : cases)
                out.append(py::dict("name"_a = c.name, "params"_a = c.params,
                                    "tolerance"_a = c.tolerance, "max_rel_err"_a = c.max_rel_err,
                                    "expect_mismatch"_a = c.expect_mismatch, "pass"_a = c.pass));
            return out;
        },
        "seed"_a = 0);
}
