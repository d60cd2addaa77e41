#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "error.hpp"

namespace sgnalign {

/// Dense row-major matrix. Vectors are 1 x n matrices.
template <typename Real>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Real> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, Real(0)) {}

    Real& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    Real operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    Real* row(std::size_t r) { return data.data() + r * cols; }
    const Real* row(std::size_t r) const { return data.data() + r * cols; }
    std::size_t size() const { return data.size(); }

    void zero() { std::fill(data.begin(), data.end(), Real(0)); }
    void resize(std::size_t r, std::size_t c) {
        rows = r;
        cols = c;
        data.assign(r * c, Real(0));
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline void require_shape(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
}

// C = A * B
template <typename Real>
void matmul(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
    require_shape(a.cols == b.rows, "matmul: inner dimensions differ");
    c.resize(a.rows, b.cols);
    const std::size_t n = b.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        Real* ci = c.row(i);
        const Real* ai = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const Real aik = ai[k];
            const Real* bk = b.row(k);
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

// C += A^T * B
template <typename Real>
void matmul_tn_acc(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
    require_shape(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols, "matmul_tn: shape mismatch");
    const std::size_t n = b.cols;
    for (std::size_t k = 0; k < a.rows; ++k) {
        const Real* ak = a.row(k);
        const Real* bk = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const Real aki = ak[i];
            Real* ci = c.row(i);
            for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
        }
    }
}

template <typename Real>
void transpose(const Matrix<Real>& a, Matrix<Real>& t) {
    t.resize(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
}

// C = A * B^T. B is transposed first so the inner loop stays a contiguous axpy.
template <typename Real>
void matmul_nt(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
    require_shape(a.cols == b.cols, "matmul_nt: inner dimensions differ");
    Matrix<Real> bt;
    transpose(b, bt);
    matmul(a, bt, c);
}

template <typename Real>
void add_inplace(Matrix<Real>& a, const Matrix<Real>& b) {
    require_shape(a.rows == b.rows && a.cols == b.cols, "add: shape mismatch");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename Real>
bool all_finite(const Matrix<Real>& m) {
    return std::all_of(m.data.begin(), m.data.end(), [](Real v) { return std::isfinite(v); });
}

// Sinusoidal position table, sin on even channels and cos on odd ones.
template <typename Real>
Matrix<Real> sinusoidal_positions(std::size_t length, std::size_t dim) {
    Matrix<Real> pe(length, dim);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - (i % 2)) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) * freq;
            pe(pos, i) = static_cast<Real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

} // namespace sgnalign
