#include "hivec/network.hpp"

#include <cmath>
#include <stdexcept>

namespace hivec {

void EncoderParams::validate() const {
    if (layers.empty()) throw std::invalid_argument("EncoderParams: no layers");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
        if (layers[i].out_dim() != layers[i + 1].in_dim()) {
            throw std::invalid_argument("EncoderParams: layer " + std::to_string(i) + " out " +
                                        std::to_string(layers[i].out_dim()) +
                                        " does not chain into layer " + std::to_string(i + 1) +
                                        " in " + std::to_string(layers[i + 1].in_dim()));
        }
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const DenseLayer& l = layers[i];
        const std::size_t out = l.out_dim();
        if (l.b.size() != out || l.gamma.size() != out || l.beta.size() != out ||
            l.running_mean.size() != out || l.running_var.size() != out) {
            throw std::invalid_argument("EncoderParams: layer " + std::to_string(i) +
                                        " vector lengths do not match out dim");
        }
        for (double v : l.running_var) {
            if (!(v > 0.0)) {
                throw std::invalid_argument("EncoderParams: running_var must stay positive");
            }
        }
    }
}

EncoderParams make_encoder(const std::vector<std::size_t>& widths, Rng& rng) {
    if (widths.size() < 2) throw std::invalid_argument("make_encoder: need at least two widths");
    EncoderParams params;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        DenseLayer layer;
        const std::size_t in = widths[i];
        const std::size_t out = widths[i + 1];
        layer.relu = (i + 2 < widths.size());
        const double stddev = layer.relu ? std::sqrt(2.0 / static_cast<double>(in))
                                         : std::sqrt(1.0 / static_cast<double>(in));
        layer.W = Matrix(in, out);
        for (double& w : layer.W.data) w = stddev * rng.normal();
        layer.b.assign(out, 0.0);
        layer.gamma.assign(out, 1.0);
        layer.beta.assign(out, 0.0);
        layer.running_mean.assign(out, 0.0);
        layer.running_var.assign(out, 1.0);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

GradientSet zero_gradients(const EncoderParams& params) {
    GradientSet g;
    g.layers.resize(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const DenseLayer& l = params.layers[i];
        g.layers[i].W = Matrix(l.W.rows, l.W.cols);
        g.layers[i].b.assign(l.out_dim(), 0.0);
        g.layers[i].gamma.assign(l.out_dim(), 0.0);
        g.layers[i].beta.assign(l.out_dim(), 0.0);
    }
    return g;
}

namespace {

std::pair<Matrix, ForwardCache> forward_impl(const EncoderParams& params,
                                             EncoderParams* mutable_params, const Matrix& x,
                                             NormMode mode) {
    if (x.cols != params.input_dim()) {
        throw std::invalid_argument("encoder_forward: input width " + std::to_string(x.cols) +
                                    " does not match encoder input " +
                                    std::to_string(params.input_dim()));
    }
    const bool batch_statistics = (mode != NormMode::RunningStats);
    if (batch_statistics && x.rows < 2) {
        throw std::invalid_argument(
            "encoder_forward: batch statistics need at least 2 samples, got " +
            std::to_string(x.rows));
    }

    ForwardCache cache;
    cache.batch_size = x.rows;
    Matrix cur = x;
    const double inv_b = 1.0 / static_cast<double>(x.rows);

    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const DenseLayer& layer = params.layers[li];
        LayerCache lc;
        lc.input = cur;
        lc.batch_statistics = batch_statistics;

        Matrix a = matmul(cur, layer.W);
        for (std::size_t r = 0; r < a.rows; ++r) {
            for (std::size_t c = 0; c < a.cols; ++c) a(r, c) += layer.b[c];
        }
        lc.pre_norm = a;

        const std::size_t out = layer.out_dim();
        lc.mean.assign(out, 0.0);
        lc.var.assign(out, 0.0);
        if (batch_statistics) {
            for (std::size_t r = 0; r < a.rows; ++r) {
                for (std::size_t c = 0; c < out; ++c) lc.mean[c] += a(r, c);
            }
            for (double& m : lc.mean) m *= inv_b;
            for (std::size_t r = 0; r < a.rows; ++r) {
                for (std::size_t c = 0; c < out; ++c) {
                    const double d = a(r, c) - lc.mean[c];
                    lc.var[c] += d * d;
                }
            }
            for (double& v : lc.var) v *= inv_b;
            if (mode == NormMode::TrainStats) {
                if (mutable_params == nullptr) {
                    throw std::logic_error("encoder_forward: TrainStats needs mutable params");
                }
                DenseLayer& ml = mutable_params->layers[li];
                const double mom = params.bn_momentum;
                for (std::size_t c = 0; c < out; ++c) {
                    ml.running_mean[c] = mom * ml.running_mean[c] + (1.0 - mom) * lc.mean[c];
                    ml.running_var[c] = mom * ml.running_var[c] + (1.0 - mom) * lc.var[c];
                }
            }
        } else {
            lc.mean = layer.running_mean;
            lc.var = layer.running_var;
        }

        lc.normalized = Matrix(a.rows, out);
        lc.pre_activation = Matrix(a.rows, out);
        for (std::size_t c = 0; c < out; ++c) {
            const double inv_std = 1.0 / std::sqrt(lc.var[c] + params.bn_epsilon);
            for (std::size_t r = 0; r < a.rows; ++r) {
                const double xn = (a(r, c) - lc.mean[c]) * inv_std;
                lc.normalized(r, c) = xn;
                lc.pre_activation(r, c) = layer.gamma[c] * xn + layer.beta[c];
            }
        }

        cur = lc.pre_activation;
        if (layer.relu) {
            for (double& v : cur.data) v = v > 0.0 ? v : 0.0;
        }
        cache.layers.push_back(std::move(lc));
    }
    return {std::move(cur), std::move(cache)};
}

}  // namespace

std::pair<Matrix, ForwardCache> encoder_forward(EncoderParams& params, const Matrix& x,
                                                NormMode mode) {
    return forward_impl(params, &params, x, mode);
}

std::pair<Matrix, ForwardCache> encoder_forward(const EncoderParams& params, const Matrix& x,
                                                NormMode mode) {
    if (mode == NormMode::TrainStats) {
        throw std::invalid_argument("encoder_forward: TrainStats requires a mutable encoder");
    }
    return forward_impl(params, nullptr, x, mode);
}

Matrix encoder_backward(const EncoderParams& params, const ForwardCache& cache,
                        const Matrix& grad_z, GradientSet& grads) {
    if (cache.layers.size() != params.layers.size()) {
        throw std::invalid_argument("encoder_backward: cache depth does not match encoder");
    }
    if (grad_z.rows != cache.batch_size || grad_z.cols != params.feature_dim()) {
        throw std::invalid_argument("encoder_backward: grad shape " + grad_z.shape_str() +
                                    " does not match cached batch " +
                                    std::to_string(cache.batch_size) + "x" +
                                    std::to_string(params.feature_dim()));
    }
    if (grads.layers.size() != params.layers.size()) {
        throw std::invalid_argument("encoder_backward: gradient set not shaped for this encoder");
    }

    Matrix g = grad_z;  // gradient w.r.t. layer output, walked backwards
    const double inv_b = 1.0 / static_cast<double>(cache.batch_size);

    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const DenseLayer& layer = params.layers[li];
        const LayerCache& lc = cache.layers[li];
        const std::size_t out = layer.out_dim();
        const std::size_t rows = g.rows;

        if (layer.relu) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < out; ++c) {
                    if (lc.pre_activation(r, c) <= 0.0) g(r, c) = 0.0;
                }
            }
        }

        GradientSet::LayerGrads& lg = grads.layers[li];
        Matrix grad_norm(rows, out);  // gradient w.r.t. normalized activations
        for (std::size_t c = 0; c < out; ++c) {
            double dgamma = 0.0, dbeta = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                dgamma += g(r, c) * lc.normalized(r, c);
                dbeta += g(r, c);
                grad_norm(r, c) = g(r, c) * layer.gamma[c];
            }
            lg.gamma[c] += dgamma;
            lg.beta[c] += dbeta;
        }

        // Back through the normalization; batch statistics couple the samples,
        // running statistics are constants.
        Matrix grad_a(rows, out);
        for (std::size_t c = 0; c < out; ++c) {
            const double inv_std = 1.0 / std::sqrt(lc.var[c] + params.bn_epsilon);
            if (lc.batch_statistics) {
                double sum_gn = 0.0, sum_gn_xn = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    sum_gn += grad_norm(r, c);
                    sum_gn_xn += grad_norm(r, c) * lc.normalized(r, c);
                }
                for (std::size_t r = 0; r < rows; ++r) {
                    grad_a(r, c) = inv_std * inv_b *
                                   (static_cast<double>(rows) * grad_norm(r, c) - sum_gn -
                                    lc.normalized(r, c) * sum_gn_xn);
                }
            } else {
                for (std::size_t r = 0; r < rows; ++r) {
                    grad_a(r, c) = grad_norm(r, c) * inv_std;
                }
            }
        }

        Matrix dW = matmul(transpose(lc.input), grad_a);
        for (std::size_t i = 0; i < dW.data.size(); ++i) lg.W.data[i] += dW.data[i];
        for (std::size_t c = 0; c < out; ++c) {
            double db = 0.0;
            for (std::size_t r = 0; r < rows; ++r) db += grad_a(r, c);
            lg.b[c] += db;
        }

        g = matmul(grad_a, transpose(layer.W));
    }
    return g;
}

LossResult cross_entropy_loss(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows) {
        throw std::invalid_argument("cross_entropy_loss: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(logits.rows) + " rows");
    }
    const std::size_t c_count = logits.cols;
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c_count) {
            throw std::invalid_argument("cross_entropy_loss: label " + std::to_string(y) +
                                        " outside [0, " + std::to_string(c_count) + ")");
        }
    }

    LossResult res;
    res.grad_logits = softmax_rows(logits);
    const double inv_b = 1.0 / static_cast<double>(logits.rows);
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const double* row = logits.data.data() + r * c_count;
        double mx = row[0];
        for (std::size_t c = 1; c < c_count; ++c) mx = std::max(mx, row[c]);
        // loss = (max - z_y) + log(sum exp(z - max)); the sum is split so the
        // saturated case resolves through log1p instead of log(1 + tiny).
        double rest = 0.0;
        int ties = -1;  // exp(0) terms beyond the first
        for (std::size_t c = 0; c < c_count; ++c) {
            if (row[c] == mx) {
                ++ties;
            } else {
                rest += std::exp(row[c] - mx);
            }
        }
        total += (mx - row[static_cast<std::size_t>(labels[r])]) +
                 std::log1p(rest + static_cast<double>(ties));
        res.grad_logits(r, static_cast<std::size_t>(labels[r])) -= 1.0;
    }
    res.loss = total * inv_b;
    for (double& v : res.grad_logits.data) v *= inv_b;
    return res;
}

LossResult entropy_loss(const Matrix& logits) {
    if (!logits.all_finite()) {
        throw std::invalid_argument("entropy_loss: logits must be finite");
    }
    LossResult res;
    const Matrix probs = softmax_rows(logits);
    res.grad_logits = Matrix(logits.rows, logits.cols);
    const double inv_b = 1.0 / static_cast<double>(logits.rows);
    double total = 0.0;
    for (std::size_t r = 0; r < probs.rows; ++r) {
        double h = 0.0;
        for (std::size_t c = 0; c < probs.cols; ++c) {
            const double p = probs(r, c);
            if (p > 0.0) h -= p * std::log(p);
        }
        total += h;
        for (std::size_t c = 0; c < probs.cols; ++c) {
            const double p = probs(r, c);
            res.grad_logits(r, c) = p > 0.0 ? -p * (std::log(p) + h) * inv_b : 0.0;
        }
    }
    res.loss = total * inv_b;
    return res;
}

void sgd_step(EncoderParams& params, const GradientSet& grads, double lr, ParamScope scope) {
    if (!(lr > 0.0) && lr != 0.0) {
        throw std::invalid_argument("sgd_step: learning rate must be non-negative");
    }
    if (grads.layers.size() != params.layers.size()) {
        throw std::invalid_argument("sgd_step: gradient set not shaped for this encoder");
    }
    if (lr == 0.0) return;  // bit-identity contract for a null step
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        DenseLayer& l = params.layers[li];
        const GradientSet::LayerGrads& g = grads.layers[li];
        for (std::size_t c = 0; c < l.out_dim(); ++c) {
            l.gamma[c] -= lr * g.gamma[c];
            l.beta[c] -= lr * g.beta[c];
        }
        if (scope == ParamScope::FullEncoder) {
            for (std::size_t i = 0; i < l.W.data.size(); ++i) l.W.data[i] -= lr * g.W.data[i];
            for (std::size_t c = 0; c < l.out_dim(); ++c) l.b[c] -= lr * g.b[c];
        }
    }
}

}  // namespace hivec
