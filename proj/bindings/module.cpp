#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hivec/adapt.hpp"
#include "hivec/checkpoint.hpp"
#include "hivec/heads.hpp"
#include "hivec/matrix.hpp"
#include "hivec/metrics.hpp"
#include "hivec/network.hpp"
#include "hivec/rng.hpp"
#include "hivec/shift.hpp"

namespace py = pybind11;
using namespace hivec;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    Matrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    std::copy_n(arr.data(), m.data.size(), m.data.begin());
    return m;
}

py::array_t<double> to_numpy(const Matrix& m) {
    py::array_t<double> arr({m.rows, m.cols});
    std::copy_n(m.data.data(), m.data.size(), arr.mutable_data());
    return arr;
}

NormMode norm_mode_from(const std::string& s) {
    if (s == "train-stats") return NormMode::TrainStats;
    if (s == "batch-stats") return NormMode::BatchStats;
    if (s == "running-stats") return NormMode::RunningStats;
    throw std::invalid_argument("mode must be train-stats, batch-stats or running-stats");
}

AdaptConfig adapt_config_from(double alpha, double tau, double tau_ood, double lr,
                              const std::string& scope, const std::string& norm_mode,
                              bool enable_merge, bool enable_gate) {
    AdaptConfig cfg;
    cfg.alpha = alpha;
    cfg.tau = tau;
    cfg.tau_ood = tau_ood;
    cfg.lr = lr;
    cfg.scope = scope == "full-encoder" ? ParamScope::FullEncoder : ParamScope::NormAffineOnly;
    cfg.norm_mode = norm_mode_from(norm_mode);
    cfg.enable_merge = enable_merge;
    cfg.enable_gate = enable_gate;
    return cfg;
}

py::dict report_to_dict(const HeadSet& heads, const BatchReport& report) {
    py::dict d;
    d["selected"] = report.selected;
    d["selected_dim"] = heads.dims[report.selected];
    d["grad_norms"] = report.grad_norms;
    d["skipped"] = report.gate.skipped;
    d["i_avg"] = report.gate.per_head_mi.empty() ? py::object(py::none())
                                                 : py::object(py::float_(report.gate.i_avg));
    py::list merged;
    if (report.merge) {
        for (std::size_t i : report.merge->merged_into) merged.append(heads.dims[i]);
    }
    d["merged_dims"] = merged;
    py::list labels, confidence, ood;
    for (const Prediction& p : report.predictions) {
        labels.append(p.label);
        confidence.append(p.confidence);
        ood.append(p.ood_score);
    }
    d["labels"] = labels;
    d["confidence"] = confidence;
    d["ood_scores"] = ood;
    return d;
}

/// Encoder plus hierarchical heads, bundled for the python surface.
class Model {
public:
    Model(std::size_t input_dim, std::size_t hidden, std::size_t feature_dim,
          std::size_t classes, std::vector<std::size_t> head_dims, std::uint64_t seed) {
        Rng rng(seed);
        encoder_ = make_encoder({input_dim, hidden, feature_dim}, rng);
        if (head_dims.empty()) head_dims = default_head_dims(feature_dim);
        heads_ = make_heads(head_dims, classes, feature_dim, rng);
    }

    Model(EncoderParams encoder, HeadSet heads)
        : encoder_(std::move(encoder)), heads_(std::move(heads)) {}

    std::vector<std::size_t> head_dims() const { return heads_.dims; }
    std::size_t class_count() const { return heads_.class_count; }

    std::vector<double> train(const py::array_t<double>& x, const std::vector<int>& labels,
                              std::size_t epochs, double lr, std::size_t batch_size,
                              std::uint64_t seed) {
        Dataset ds;
        ds.x = to_matrix(x);
        ds.labels = labels;
        ds.outlier_flags.assign(ds.size(), 0);
        ds.group_labels.assign(ds.size(), kNoGroup);
        ds.class_count = heads_.class_count;
        TrainOptions opts;
        opts.epochs = epochs;
        opts.lr = lr;
        opts.batch_size = batch_size;
        Rng rng(seed);
        std::vector<double> losses;
        for (const EpochStats& e : train_source(encoder_, heads_, ds, opts, rng)) {
            losses.push_back(e.mean_loss);
        }
        return losses;
    }

    py::array_t<double> features(const py::array_t<double>& x, const std::string& mode) {
        auto [z, cache] = encoder_forward(encoder_, to_matrix(x), norm_mode_from(mode));
        return to_numpy(z);
    }

    py::array_t<double> logits(const py::array_t<double>& x, std::size_t head,
                               const std::string& mode) {
        auto [z, cache] =
            encoder_forward(std::as_const(encoder_), to_matrix(x), norm_mode_from(mode));
        return to_numpy(head_logits(heads_, z, head));
    }

    std::vector<double> grad_norms(const py::array_t<double>& x, const std::string& mode) {
        auto [z, cache] =
            encoder_forward(std::as_const(encoder_), to_matrix(x), norm_mode_from(mode));
        return head_grad_norms(heads_, z);
    }

    py::dict adapt(const py::array_t<double>& x, double alpha, double tau, double tau_ood,
                   double lr, const std::string& scope, const std::string& norm_mode,
                   bool enable_merge, bool enable_gate) {
        BatchRecord batch;
        batch.x = to_matrix(x);
        batch.true_labels.assign(batch.x.rows, kOutlierLabel);
        batch.outlier_flags.assign(batch.x.rows, 0);
        batch.group_labels.assign(batch.x.rows, kNoGroup);
        const AdaptConfig cfg = adapt_config_from(alpha, tau, tau_ood, lr, scope, norm_mode,
                                                  enable_merge, enable_gate);
        const BatchReport report = adapt_batch(encoder_, heads_, batch, cfg);
        return report_to_dict(heads_, report);
    }

    py::dict tent_step(const py::array_t<double>& x, double lr, const std::string& scope,
                       const std::string& norm_mode) {
        BatchRecord batch;
        batch.x = to_matrix(x);
        batch.true_labels.assign(batch.x.rows, kOutlierLabel);
        batch.outlier_flags.assign(batch.x.rows, 0);
        batch.group_labels.assign(batch.x.rows, kNoGroup);
        AdaptConfig cfg;
        cfg.lr = lr;
        cfg.scope = scope == "full-encoder" ? ParamScope::FullEncoder
                                            : ParamScope::NormAffineOnly;
        cfg.norm_mode = norm_mode_from(norm_mode);
        const BatchReport report =
            tent_baseline_step(encoder_, heads_, heads_.size() - 1, batch, cfg);
        return report_to_dict(heads_, report);
    }

    py::dict merge(std::size_t selected, double alpha, double tau) {
        AdaptConfig cfg;
        cfg.alpha = alpha;
        cfg.tau = tau;
        const MergeReport report = merge_task_vectors(heads_, selected, cfg);
        py::dict d;
        d["selected"] = report.selected;
        d["similarities"] = report.similarities;
        d["merged_into"] = report.merged_into;
        d["prefix_lengths"] = report.prefix_lengths;
        return d;
    }

    py::array_t<double> head_weights(std::size_t i) const {
        if (i >= heads_.size()) throw std::out_of_range("head index");
        return to_numpy(heads_.weights[i]);
    }

    void save(const std::string& path) const { save_checkpoint(encoder_, heads_, path); }

    static Model load(const std::string& path) {
        auto [encoder, heads] = load_checkpoint(path);
        return Model(std::move(encoder), std::move(heads));
    }

private:
    EncoderParams encoder_;
    HeadSet heads_;
};

}  // namespace

PYBIND11_MODULE(_hivec, m) {
    m.doc() = "Hierarchical test-time adaptation core (C++ backend)";

    m.def(
        "matmul",
        [](const py::array_t<double>& a, const py::array_t<double>& b) {
            return to_numpy(matmul(to_matrix(a), to_matrix(b)));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "softmax_rows",
        [](const py::array_t<double>& logits) { return to_numpy(softmax_rows(to_matrix(logits))); },
        py::arg("logits"));

    m.def(
        "entropy", [](const std::vector<double>& probs) { return entropy(probs); },
        py::arg("probs"), "Shannon entropy in nats of one probability vector");

    m.def(
        "frobenius_norm",
        [](const py::array_t<double>& x) { return frobenius_norm(to_matrix(x)); }, py::arg("x"));

    m.def(
        "cosine_sim_padded",
        [](const py::array_t<double>& v, const py::array_t<double>& w) {
            return cosine_sim_padded(to_matrix(v), to_matrix(w));
        },
        py::arg("v"), py::arg("w"),
        "Cosine similarity with zero padding to the longer flattened length");

    m.def(
        "mutual_information",
        [](const py::array_t<double>& p, const py::array_t<double>& q) {
            return mutual_information(to_matrix(p), to_matrix(q));
        },
        py::arg("p_star"), py::arg("p_other"),
        "Plug-in mutual information (nats) between two probability tables");

    m.def("h_score", &h_score, py::arg("acc"), py::arg("auc"));

    m.def(
        "auroc",
        [](const std::vector<double>& inl, const std::vector<double>& outl) {
            return auroc(inl, outl);
        },
        py::arg("scores_inlier"), py::arg("scores_outlier"));

    m.def("default_head_dims", &default_head_dims, py::arg("feature_dim"));

    py::class_<Model>(m, "Model")
        .def(py::init<std::size_t, std::size_t, std::size_t, std::size_t,
                      std::vector<std::size_t>, std::uint64_t>(),
             py::arg("input_dim"), py::arg("hidden") = 64, py::arg("feature_dim") = 64,
             py::arg("classes") = 4, py::arg("head_dims") = std::vector<std::size_t>{},
             py::arg("seed") = 0)
        .def_property_readonly("head_dims", &Model::head_dims)
        .def_property_readonly("class_count", &Model::class_count)
        .def("train", &Model::train, py::arg("x"), py::arg("labels"), py::arg("epochs") = 40,
             py::arg("lr") = 0.05, py::arg("batch_size") = 128, py::arg("seed") = 0)
        .def("features", &Model::features, py::arg("x"), py::arg("mode") = "batch-stats")
        .def("logits", &Model::logits, py::arg("x"), py::arg("head"),
             py::arg("mode") = "batch-stats")
        .def("grad_norms", &Model::grad_norms, py::arg("x"), py::arg("mode") = "batch-stats")
        .def("adapt", &Model::adapt, py::arg("x"), py::arg("alpha") = 0.7, py::arg("tau") = 0.6,
             py::arg("tau_ood") = 1.2, py::arg("lr") = 1e-3, py::arg("scope") = "norm-affine",
             py::arg("norm_mode") = "batch-stats", py::arg("enable_merge") = true,
             py::arg("enable_gate") = true)
        .def("tent_step", &Model::tent_step, py::arg("x"), py::arg("lr") = 1e-3,
             py::arg("scope") = "norm-affine", py::arg("norm_mode") = "batch-stats")
        .def("merge", &Model::merge, py::arg("selected"), py::arg("alpha") = 0.7,
             py::arg("tau") = 0.6)
        .def("head_weights", &Model::head_weights, py::arg("i"))
        .def("save", &Model::save, py::arg("path"))
        .def_static("load", &Model::load, py::arg("path"));
}
