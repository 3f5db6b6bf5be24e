#pragma once

// Small dense row-major matrix type plus the handful of GEMM shapes the
// encoder and language model need. Inner loops go through the kernel
// dispatch so they pick up the SIMD variants.

#include <cassert>
#include <cstddef>
#include <vector>

#include "fcni/kernels/simd.hpp"

namespace fcni {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }

    void fill(double v) { data.assign(rows * cols, v); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

namespace la {

// C = A * B    (A: M x K, B: K x N, C: M x N)
inline void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.rows);
    c.rows = a.rows;
    c.cols = b.cols;
    c.data.assign(a.rows * b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k)
            kern::axpy(ai[k], b.row(k), ci, b.cols);
    }
}

// C += A * B
inline void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k)
            kern::axpy(ai[k], b.row(k), ci, b.cols);
    }
}

// C += A^T * B   (A: K x M, B: K x N, C: M x N). Used for weight gradients.
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* ak = a.row(k);
        const double* bk = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i)
            kern::axpy(ak[i], bk, c.row(i), b.cols);
    }
}

// C = A * B^T   (A: M x K, B: N x K, C: M x N). Used for input gradients.
inline void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.cols);
    c.rows = a.rows;
    c.cols = b.rows;
    c.data.resize(a.rows * b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t j = 0; j < b.rows; ++j)
            ci[j] = kern::dot(ai, b.row(j), a.cols);
    }
}

// c[j] += sum_i A(i, j)
inline void colsum_acc(const Matrix& a, double* c) {
    for (std::size_t i = 0; i < a.rows; ++i)
        kern::axpy(1.0, a.row(i), c, a.cols);
}

// Add the same row vector to every row of A.
inline void add_row_broadcast(Matrix& a, const double* v) {
    for (std::size_t i = 0; i < a.rows; ++i)
        kern::axpy(1.0, v, a.row(i), a.cols);
}

}  // namespace la

}  // namespace fcni
