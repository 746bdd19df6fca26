#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "peftlab/errors.hpp"

namespace peftlab {

/// Dense row-major matrix of doubles. The universal numeric carrier.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
}

// Summation over k runs ascending for every output entry, so results are
// bit-reproducible regardless of loop blocking.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw DimensionError("matmul: inner dimension mismatch " + a.shape_str() +
                             " x " + b.shape_str());
    Matrix y(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* yi = &y.data[i * y.cols];
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.data[i * a.cols + k];
            const double* bk = &b.data[k * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) yi[j] += aik * bk[j];
        }
    }
    return y;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

inline Matrix scale(const Matrix& m, double c) {
    Matrix y = m;
    for (double& v : y.data) v *= c;
    return y;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix y = a;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
    return y;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix y = a;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] -= b.data[i];
    return y;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix y = a;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= b.data[i];
    return y;
}

/// sqrt(sum of squared entries); 0 for the all-zero matrix.
inline double frob_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

inline double frob_inner(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "frob_inner");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

/// Per-column l2 norms. Zero columns yield 0; callers decide the guard.
inline std::vector<double> col_norms(const Matrix& m) {
    std::vector<double> out(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out[j] += m(i, j) * m(i, j);
    for (double& v : out) v = std::sqrt(v);
    return out;
}

// ||AB||_F without materializing AB: ||AB||_F^2 = <A^T A, B B^T>, O(r^2(n+m)).
inline double lowrank_frob_norm(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw DimensionError("lowrank_frob_norm: inner dimension mismatch " +
                             a.shape_str() + " x " + b.shape_str());
    const Matrix ata = matmul(transpose(a), a);
    const Matrix bbt = matmul(b, transpose(b));
    double s = frob_inner(ata, bbt);
    if (s < 0.0) s = 0.0;  // rounding
    return std::sqrt(s);
}

inline void require_all_finite(const Matrix& m, const char* context) {
    if (!m.all_finite())
        throw NumericError(std::string(context) + ": non-finite entries in " +
                           m.shape_str() + " matrix");
}

}  // namespace peftlab
