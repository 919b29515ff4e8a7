#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gat/attack.hpp"
#include "gat/data.hpp"
#include "gat/error.hpp"
#include "gat/experiment.hpp"
#include "gat/metrics.hpp"
#include "gat/model.hpp"
#include "gat/moo.hpp"
#include "gat/train.hpp"

namespace py = pybind11;
using namespace gat;

namespace {

// Python objects cross as JSON text so that dicts map onto the C++ config types.
nlohmann::json to_nl(const py::handle& obj) {
    if (obj.is_none()) return nlohmann::json::object();
    auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
    return nlohmann::json::parse(text);
}

py::object from_nl(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    if (shape.empty()) shape = {1};
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
    py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

std::vector<std::vector<double>> rows_of(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-d array of per-task gradients");
    std::vector<std::vector<double>> out(a.shape(0));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i].assign(a.data(i, 0), a.data(i, 0) + a.shape(1));
    return out;
}

TrainConfig config_of(const py::object& overrides) {
    auto j = to_json(TrainConfig{});
    j.merge_patch(to_nl(overrides));
    return train_config_from_json(j);
}

MultiTaskModel new_model(const LabeledCorpus& corpus, const std::vector<std::string>& aux,
                         const std::vector<std::size_t>& hidden, std::size_t jigsaw_grid, std::uint64_t seed) {
    std::vector<TaskSpec> specs{tasks::fine_target(corpus.fine_classes())};
    for (const auto& a : aux) specs.push_back(tasks::auxiliary(a, jigsaw_grid));
    std::vector<std::size_t> widths{corpus.dims.size()};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    return MultiTaskModel::build({widths}, specs, seed);
}

py::dict eval_dict(const EvalResult& e) {
    py::dict d;
    d["count"] = e.count;
    d["clean_accuracy"] = e.clean_accuracy;
    d["robust_accuracy"] = e.robust_accuracy;
    d["clean_auc"] = e.clean_auc ? py::cast(*e.clean_auc) : py::none();
    d["robust_auc"] = e.robust_auc ? py::cast(*e.robust_auc) : py::none();
    d["vulnerability"] = e.vulnerability;
    d["robust_correct"] = e.robust_correct;
    return d;
}

std::vector<std::size_t> split_ids(const LabeledCorpus& c, const std::string& split) {
    return c.indices(split_from_string(split));
}

}  // namespace

PYBIND11_MODULE(_gat_lab, m) {
    m.doc() = "Guided adversarial training core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<GraphError>(m, "GraphError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    py::class_<LabeledCorpus>(m, "Corpus")
        .def_property_readonly("size", &LabeledCorpus::size)
        .def_property_readonly("shape", [](const LabeledCorpus& c) {
            return py::make_tuple(c.dims.height, c.dims.width, c.dims.channels);
        })
        .def_readonly("class_names", &LabeledCorpus::class_names)
        .def_readonly("macro_names", &LabeledCorpus::macro_names)
        .def_readonly("fine", &LabeledCorpus::fine)
        .def("indices", &split_ids, py::arg("split"))
        .def("images", [](const LabeledCorpus& c) {
            py::array_t<float> out({c.size(), c.dims.height, c.dims.width, c.dims.channels});
            std::copy(c.pixels.begin(), c.pixels.end(), out.mutable_data());
            return out;
        })
        .def("batch", [](const LabeledCorpus& c, const std::vector<std::size_t>& ids) { return to_array(c.batch(ids)); })
        .def("checksum", [](const LabeledCorpus& c) { return corpus_checksum(c); })
        .def("save", [](const LabeledCorpus& c, const std::filesystem::path& p) { save_corpus(c, p); })
        .def(
            "subset",
            [](const LabeledCorpus& c, double fraction, bool stratify, std::uint64_t seed,
               const std::optional<std::string>& within) {
                std::optional<Split> w;
                if (within) w = split_from_string(*within);
                return split_subset(c, fraction, stratify, seed, w);
            },
            py::arg("fraction"), py::arg("stratify") = true, py::arg("seed") = 0, py::arg("within") = py::none())
        .def("__eq__", [](const LabeledCorpus& a, const LabeledCorpus& b) { return a == b; });

    m.def(
        "generate_synthetic",
        [](std::size_t n, std::size_t image_size, std::uint64_t seed, std::size_t val, std::size_t test, double noise) {
            SyntheticOptions o;
            o.n = n;
            o.image_size = image_size;
            o.seed = seed;
            o.val_count = val;
            o.test_count = test;
            o.noise = noise;
            return generate_synthetic(o);
        },
        py::arg("n") = 3000, py::arg("image_size") = 16, py::arg("seed") = 0, py::arg("val") = 300,
        py::arg("test") = 700, py::arg("noise") = 0.08);
    m.def("load_corpus", [](const std::filesystem::path& p) { return load_corpus(p); }, py::arg("path"));

    py::class_<MultiTaskModel>(m, "Model")
        .def_property_readonly("task_names", [](const MultiTaskModel& mdl) {
            std::vector<std::string> names;
            for (const auto& h : mdl.heads()) names.push_back(h.spec.name);
            return names;
        })
        .def_property_readonly("enabled_tasks", &MultiTaskModel::enabled_tasks)
        .def_property_readonly("parameter_count", &MultiTaskModel::parameter_count)
        .def("parameters", &MultiTaskModel::all_parameters)
        .def("disable_auxiliary", &MultiTaskModel::disable_auxiliary)
        .def("predict",
             [](const MultiTaskModel& mdl, const Array& x) {
                 py::list out;
                 const auto logits = predict(mdl, to_tensor(x));
                 for (std::size_t t = 0; t < logits.size(); ++t)
                     out.append(mdl.head(t).enabled ? py::object(to_array(logits[t])) : py::none());
                 return out;
             },
             py::arg("x"), "Logits per task for a [N, D] batch; None for disabled heads.")
        .def("save", [](const MultiTaskModel& mdl, const std::filesystem::path& p) { save_checkpoint(mdl, p); })
        .def("to_dict", [](const MultiTaskModel& mdl) { return from_nl(model_to_json(mdl)); })
        .def("__eq__", [](const MultiTaskModel& a, const MultiTaskModel& b) { return a == b; });

    m.def("build_model", &new_model, py::arg("corpus"), py::arg("auxiliary") = std::vector<std::string>{},
          py::arg("hidden") = std::vector<std::size_t>{128, 64}, py::arg("jigsaw_grid") = 4, py::arg("seed") = 0);
    m.def("load_model", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"));

    m.def("default_config", [] { return from_nl(to_json(TrainConfig{})); });
    m.def(
        "train",
        [](const MultiTaskModel& model, const LabeledCorpus& corpus, const std::string& mode, const py::object& config) {
            const auto m = train_mode_from_string(mode);
            const auto c = config_of(config);
            std::optional<TrainResult> r;
            {
                py::gil_scoped_release release;
                r.emplace(train(m, model, corpus, c));
            }
            py::dict d;
            d["model"] = r->model;
            d["manifest"] = from_nl(run_manifest(m, c, *r));
            return d;
        },
        py::arg("model"), py::arg("corpus"), py::arg("mode") = "gat", py::arg("config") = py::none(),
        "Train from an initial model; returns {'model', 'manifest'}.");
    m.def(
        "evaluate",
        [](const MultiTaskModel& model, const LabeledCorpus& corpus, const std::string& split, const py::object& attack,
           std::uint64_t seed) {
            auto j = to_json(TrainConfig{});
            j["eval_attack"].merge_patch(to_nl(attack));
            const auto c = train_config_from_json(j);
            return eval_dict(evaluate_model(model, corpus, split_ids(corpus, split), c.eval_attack, seed));
        },
        py::arg("model"), py::arg("corpus"), py::arg("split") = "test", py::arg("attack") = py::none(),
        py::arg("seed") = 0);

    m.def(
        "pgd_attack",
        [](const MultiTaskModel& model, const LabeledCorpus& corpus, const std::vector<std::size_t>& ids,
           const py::object& attack, std::uint64_t seed) {
            auto j = to_json(TrainConfig{});
            j["attack"].merge_patch(to_nl(attack));
            const auto cfg = train_config_from_json(j).attack;
            std::vector<TaskLabels> labels;
            for (const auto& h : model.heads()) labels.push_back(corpus.labels(h.spec, ids));
            ModelTarget target(model, labels);
            auto pb = pgd_attack(target, corpus.batch(ids), cfg, seed);
            py::dict d;
            d["x_adv"] = to_array(pb.x_adv);
            d["delta"] = to_array(pb.delta);
            d["attacked"] = pb.attacked;
            d["loss_before"] = pb.loss_before;
            d["loss_after"] = pb.loss_after;
            return d;
        },
        py::arg("model"), py::arg("corpus"), py::arg("ids"), py::arg("attack") = py::none(), py::arg("seed") = 0,
        "PGD on the untransformed inputs of `ids`; label-based auxiliary tasks only.");

    m.def(
        "mgda",
        [](const Array& grads, std::size_t max_iters, double tol) {
            auto g = rows_of(grads);
            auto r = mgda_frank_wolfe(gram_matrix(g), {max_iters, tol});
            py::dict d;
            d["weights"] = r.weights;
            d["norm_sq"] = r.norm_sq;
            d["iterations"] = r.iterations;
            d["converged"] = r.converged;
            d["direction"] = combine(g, r.weights);
            return d;
        },
        py::arg("grads"), py::arg("max_iters") = 250, py::arg("tol") = 1e-6,
        "Min-norm convex combination of the rows of `grads`.");
    m.def("min_norm_two_task", [](const std::vector<double>& a, const std::vector<double>& b) {
        auto s = min_norm_two_task(a, b);
        return py::make_tuple(s.gamma, s.direction);
    });

    m.def("cosine", [](const std::vector<double>& a, const std::vector<double>& b) { return cosine_angle(a, b).cosine; });
    m.def("magnitude_similarity",
          [](const std::vector<double>& a, const std::vector<double>& b) { return magnitude_similarity(a, b); });
    m.def("curvature_measure",
          [](const std::vector<double>& a, const std::vector<double>& b) { return curvature_measure(a, b); });
    m.def(
        "hypervolume_2d",
        [](const std::vector<std::pair<double, double>>& pts, std::pair<double, double> ref) {
            ParetoFront2D f;
            for (auto [a, b] : pts) f.points.push_back({a, b});
            f.reference = {ref.first, ref.second};
            return hypervolume_2d(f);
        },
        py::arg("points"), py::arg("reference"));
    m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) {
        auto r = pearson_r(x, y);
        return py::make_tuple(r.r, r.p_value);
    });
    m.def("roc_auc", [](const std::vector<double>& s, const std::vector<int>& l) { return roc_auc(s, l); });
    m.def("mcnemar", [](std::size_t b, std::size_t c) {
        auto r = mcnemar_test(b, c);
        return py::make_tuple(r.chi2, r.reject);
    });

    m.def("preset_names", &preset_names);
    m.def(
        "run_experiment",
        [](const std::string& preset, const std::filesystem::path& out_dir, const std::vector<std::uint64_t>& seeds,
           const py::object& config, const std::vector<std::size_t>& hidden, std::size_t n, std::size_t image_size,
           std::size_t threads) {
            ExperimentOptions o;
            o.preset = preset;
            o.dir = out_dir;
            o.seeds = seeds;
            o.overrides = to_nl(config);
            o.hidden = hidden;
            o.data.n = n;
            o.data.image_size = image_size;
            if (image_size % 4 != 0) o.data.jigsaw_grid = 2;
            o.data.val_count = n / 10;
            o.data.test_count = (n * 7) / 30;
            o.threads = threads;
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(o);
            }
            py::list rows;
            for (const auto& row : r.rows) rows.append(from_nl(to_json(row)));
            return rows;
        },
        py::arg("preset"), py::arg("out_dir"), py::arg("seeds") = std::vector<std::uint64_t>{0, 1, 2},
        py::arg("config") = py::none(), py::arg("hidden") = std::vector<std::size_t>{128, 64}, py::arg("n") = 3000,
        py::arg("image_size") = 16, py::arg("threads") = 1);
}
