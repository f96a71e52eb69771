#include "hivec/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hivec/shift.hpp"

namespace hivec {

void HeadSet::validate(std::size_t feature_dim) const {
    if (dims.empty()) throw std::invalid_argument("HeadSet: no heads");
    if (dims.size() != weights.size()) {
        throw std::invalid_argument("HeadSet: dims/weights length mismatch");
    }
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        if (dims[i] >= dims[i + 1]) {
            throw std::invalid_argument("HeadSet: dims must be strictly increasing");
        }
    }
    if (dims.back() != feature_dim) {
        throw std::invalid_argument("HeadSet: last dim " + std::to_string(dims.back()) +
                                    " must equal feature dim " + std::to_string(feature_dim));
    }
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (weights[i].rows != dims[i] || weights[i].cols != class_count) {
            throw std::invalid_argument("HeadSet: head " + std::to_string(i) + " has shape " +
                                        weights[i].shape_str() + ", expected " +
                                        std::to_string(dims[i]) + "x" +
                                        std::to_string(class_count));
        }
    }
}

std::vector<std::size_t> default_head_dims(std::size_t feature_dim) {
    if (feature_dim == 0) throw std::invalid_argument("default_head_dims: zero feature dim");
    std::vector<std::size_t> dims;
    for (std::size_t m = 8; m < feature_dim; m *= 2) dims.push_back(m);
    if (dims.empty() || dims.back() != feature_dim) dims.push_back(feature_dim);
    return dims;
}

HeadSet make_heads(const std::vector<std::size_t>& dims, std::size_t class_count,
                   std::size_t feature_dim, Rng& rng) {
    HeadSet heads;
    heads.dims = dims;
    heads.class_count = class_count;
    for (std::size_t m : dims) {
        Matrix w(m, class_count);
        const double stddev = 1.0 / std::sqrt(static_cast<double>(m));
        for (double& v : w.data) v = stddev * rng.normal();
        heads.weights.push_back(std::move(w));
    }
    heads.validate(feature_dim);
    return heads;
}

Matrix head_logits(const HeadSet& heads, const Matrix& z, std::size_t i) {
    if (i >= heads.size()) {
        throw std::out_of_range("head_logits: head index " + std::to_string(i) + " of " +
                                std::to_string(heads.size()));
    }
    const std::size_t m = heads.dims[i];
    if (z.cols < m) {
        throw std::invalid_argument("head_logits: features have " + std::to_string(z.cols) +
                                    " columns, head needs " + std::to_string(m));
    }
    const Matrix& w = heads.weights[i];
    Matrix out(z.rows, heads.class_count);
    for (std::size_t r = 0; r < z.rows; ++r) {
        const double* zrow = z.data.data() + r * z.cols;
        double* orow = out.data.data() + r * out.cols;
        for (std::size_t k = 0; k < m; ++k) {
            const double zk = zrow[k];
            if (zk == 0.0) continue;
            const double* wrow = w.data.data() + k * w.cols;
            for (std::size_t c = 0; c < out.cols; ++c) orow[c] += zk * wrow[c];
        }
    }
    return out;
}

MultiheadLoss multihead_ce(const HeadSet& heads, const Matrix& z, const std::vector<int>& labels) {
    MultiheadLoss res;
    res.grad_z = Matrix(z.rows, z.cols);
    res.grad_heads.reserve(heads.size());
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const std::size_t m = heads.dims[i];
        const Matrix logits = head_logits(heads, z, i);
        LossResult ce = cross_entropy_loss(logits, labels);
        res.loss += ce.loss;
        res.head_loss.push_back(ce.loss);

        // dL/dW_i = z_prefix^T . grad_logits, dL/dz_prefix += grad_logits . W_i^T
        Matrix grad_w(m, heads.class_count);
        for (std::size_t r = 0; r < z.rows; ++r) {
            const double* zrow = z.data.data() + r * z.cols;
            const double* grow = ce.grad_logits.data.data() + r * ce.grad_logits.cols;
            for (std::size_t k = 0; k < m; ++k) {
                double* wrow = grad_w.data.data() + k * grad_w.cols;
                const double zk = zrow[k];
                for (std::size_t c = 0; c < heads.class_count; ++c) wrow[c] += zk * grow[c];
            }
            double* gz = res.grad_z.data.data() + r * res.grad_z.cols;
            for (std::size_t k = 0; k < m; ++k) {
                const double* wrow = heads.weights[i].data.data() + k * heads.class_count;
                double acc = 0.0;
                for (std::size_t c = 0; c < heads.class_count; ++c) acc += grow[c] * wrow[c];
                gz[k] += acc;
            }
        }
        res.grad_heads.push_back(std::move(grad_w));
    }
    return res;
}

std::vector<EpochStats> train_source(EncoderParams& encoder, HeadSet& heads,
                                     const Dataset& dataset, const TrainOptions& opts, Rng& rng) {
    if (opts.epochs < 1) throw std::invalid_argument("train_source: epochs must be >= 1");
    if (dataset.size() == 0) throw std::invalid_argument("train_source: empty dataset");
    if (opts.batch_size < 2) throw std::invalid_argument("train_source: batch size must be >= 2");
    heads.validate(encoder.feature_dim());
    for (int y : dataset.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= heads.class_count) {
            throw std::invalid_argument("train_source: label " + std::to_string(y) +
                                        " outside [0, " + std::to_string(heads.class_count) + ")");
        }
    }

    std::vector<EpochStats> trace;
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(order);
        EpochStats stats;
        stats.head_loss.assign(heads.size(), 0.0);
        std::size_t batches = 0;

        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t count = std::min(opts.batch_size, order.size() - start);
            if (count < 2) break;  // a trailing singleton cannot feed batch norm
            Matrix xb(count, dataset.dim());
            std::vector<int> yb(count);
            for (std::size_t r = 0; r < count; ++r) {
                const std::size_t src = order[start + r];
                std::copy_n(dataset.x.data.data() + src * dataset.dim(), dataset.dim(),
                            xb.data.data() + r * dataset.dim());
                yb[r] = dataset.labels[src];
            }

            auto [z, cache] = encoder_forward(encoder, xb, NormMode::TrainStats);
            MultiheadLoss mh = multihead_ce(heads, z, yb);

            GradientSet grads = zero_gradients(encoder);
            encoder_backward(encoder, cache, mh.grad_z, grads);
            sgd_step(encoder, grads, opts.lr, ParamScope::FullEncoder);
            for (std::size_t i = 0; i < heads.size(); ++i) {
                Matrix& w = heads.weights[i];
                const Matrix& g = mh.grad_heads[i];
                for (std::size_t j = 0; j < w.data.size(); ++j) w.data[j] -= opts.lr * g.data[j];
            }

            stats.mean_loss += mh.loss;
            for (std::size_t i = 0; i < heads.size(); ++i) stats.head_loss[i] += mh.head_loss[i];
            ++batches;
        }

        if (batches == 0) throw std::invalid_argument("train_source: batch size exceeds dataset");
        stats.mean_loss /= static_cast<double>(batches);
        for (double& l : stats.head_loss) l /= static_cast<double>(batches);

        const MrlEvalResult eval =
            zero_shot_mrl_eval(encoder, heads, dataset, NormMode::RunningStats);
        stats.head_accuracy = eval.head_accuracy;
        trace.push_back(std::move(stats));
    }
    return trace;
}

MrlEvalResult zero_shot_mrl_eval(const EncoderParams& encoder, const HeadSet& heads,
                                 const Dataset& eval_set, NormMode mode) {
    if (eval_set.size() == 0) throw std::invalid_argument("zero_shot_mrl_eval: empty eval set");
    auto [z, cache] = encoder_forward(encoder, eval_set.x, mode);

    MrlEvalResult res;
    res.head_accuracy.assign(heads.size(), 0.0);
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const Matrix logits = head_logits(heads, z, i);
        std::size_t correct = 0;
        for (std::size_t r = 0; r < logits.rows; ++r) {
            std::size_t argmax = 0;
            for (std::size_t c = 1; c < logits.cols; ++c) {
                if (logits(r, c) > logits(r, argmax)) argmax = c;
            }
            if (static_cast<int>(argmax) == eval_set.labels[r]) ++correct;
        }
        res.head_accuracy[i] = static_cast<double>(correct) / static_cast<double>(logits.rows);
    }
    res.best_head = 0;
    for (std::size_t i = 1; i < heads.size(); ++i) {
        if (res.head_accuracy[i] > res.head_accuracy[res.best_head]) res.best_head = i;
    }
    return res;
}

}  // namespace hivec
