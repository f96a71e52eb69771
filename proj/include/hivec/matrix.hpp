#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hivec {

/// Dense row-major matrix of 64-bit floats. The universal numeric carrier:
/// feature batches, weights, logits and probability tables all live here.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // length rows*cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> d);

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
    static Matrix identity(std::size_t n);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows_in);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;

    bool all_finite() const;
};

bool operator==(const Matrix& a, const Matrix& b);

/// Standard matrix product. Throws std::invalid_argument naming both shapes
/// when inner dimensions disagree.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);

/// Row-wise softmax with per-row max subtraction; each output row sums to 1
/// and stays finite for arbitrary finite inputs.
Matrix softmax_rows(const Matrix& logits);

/// Shannon entropy in nats of one probability row, with 0*ln 0 := 0.
/// Throws std::domain_error on negative entries or a row sum off by > 1e-6.
double entropy(const double* probs, std::size_t n);
double entropy(const std::vector<double>& probs);
double row_entropy(const Matrix& probs, std::size_t row);

double frobenius_norm(const Matrix& m);

/// Cosine similarity of two matrices flattened row-major, the shorter vector
/// zero-padded to the longer length (padding changes neither norms nor the
/// shared-prefix dot product). Throws std::domain_error if either side is
/// all-zero; callers that need a total function map that case to 0.
double cosine_sim_padded(const Matrix& v, const Matrix& w);

}  // namespace hivec
