#include "hivec/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hivec {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d)
    : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols) {
        throw std::invalid_argument("Matrix: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows_in) {
    if (rows_in.empty()) return Matrix();
    Matrix m(rows_in.size(), rows_in[0].size());
    for (std::size_t r = 0; r < rows_in.size(); ++r) {
        if (rows_in[r].size() != m.cols) {
            throw std::invalid_argument("Matrix::from_rows: ragged row " + std::to_string(r));
        }
        std::copy(rows_in[r].begin(), rows_in[r].end(), m.data.begin() + r * m.cols);
    }
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

bool Matrix::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: dimension mismatch (" + a.shape_str() + " vs " +
                                    b.shape_str() + ")");
    }
    Matrix out(a.rows, b.cols);
    // ikj loop order keeps the inner stride unit-length for row-major data.
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* orow = out.data.data() + i * out.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            out(c, r) = m(r, c);
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add: shape mismatch (" + a.shape_str() + " vs " +
                                    b.shape_str() + ")");
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Matrix scale(const Matrix& m, double s) {
    Matrix out = m;
    for (double& v : out.data) v *= s;
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const double* in = logits.data.data() + r * logits.cols;
        double* o = out.data.data() + r * out.cols;
        double mx = in[0];
        for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (std::size_t c = 0; c < logits.cols; ++c) o[c] /= sum;
    }
    return out;
}

double entropy(const double* probs, std::size_t n) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (probs[i] < 0.0) {
            throw std::domain_error("entropy: negative probability " + std::to_string(probs[i]));
        }
        sum += probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw std::domain_error("entropy: probabilities sum to " + std::to_string(sum));
    }
    double h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
    }
    return h;
}

double entropy(const std::vector<double>& probs) { return entropy(probs.data(), probs.size()); }

double row_entropy(const Matrix& probs, std::size_t row) {
    return entropy(probs.data.data() + row * probs.cols, probs.cols);
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

double cosine_sim_padded(const Matrix& v, const Matrix& w) {
    // Zero-padding the shorter flattened vector leaves both norms and the
    // shared-prefix dot product as they are, so only the prefix matters.
    const std::size_t n = std::min(v.data.size(), w.data.size());
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += v.data[i] * w.data[i];
    const double nv = frobenius_norm(v);
    const double nw = frobenius_norm(w);
    if (nv == 0.0 || nw == 0.0) {
        throw std::domain_error("cosine_sim_padded: similarity undefined for all-zero vector");
    }
    double sim = dot / (nv * nw);
    return std::clamp(sim, -1.0, 1.0);
}

}  // namespace hivec
