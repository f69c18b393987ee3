#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "error.hpp"

namespace domada {

/// Dense row-major matrix. Activations are stored one token per row.
template <class T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const noexcept { return data.empty(); }
    std::size_t size() const noexcept { return data.size(); }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    bool operator==(const Matrix&) const = default;
};

template <class To, class From>
Matrix<To> cast(const Matrix<From>& m) {
    Matrix<To> out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<To>(m.data[i]);
    return out;
}

/// Y = X * W^T, X: n x k, W: m x k.
template <class T>
Matrix<T> matmul_nt(const Matrix<T>& x, const Matrix<T>& w) {
    if (x.cols != w.cols) throw InvalidArgument("matmul_nt: inner dimension mismatch");
    Matrix<T> y(x.rows, w.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const T* xi = x.data.data() + i * x.cols;
        for (std::size_t j = 0; j < w.rows; ++j) {
            const T* wj = w.data.data() + j * w.cols;
            T acc = 0;
            for (std::size_t k = 0; k < x.cols; ++k) acc += xi[k] * wj[k];
            y.data[i * y.cols + j] = acc;
        }
    }
    return y;
}

/// Y = X * M, X: n x k, M: k x m.
template <class T>
Matrix<T> matmul_nn(const Matrix<T>& x, const Matrix<T>& m) {
    if (x.cols != m.rows) throw InvalidArgument("matmul_nn: inner dimension mismatch");
    Matrix<T> y(x.rows, m.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        T* yi = y.data.data() + i * y.cols;
        for (std::size_t k = 0; k < x.cols; ++k) {
            const T a = x.data[i * x.cols + k];
            const T* mk = m.data.data() + k * m.cols;
            for (std::size_t j = 0; j < m.cols; ++j) yi[j] += a * mk[j];
        }
    }
    return y;
}

/// G += X^T * Y, X: n x a, Y: n x b, G: a x b.
template <class T>
void accumulate_tn(Matrix<T>& g, const Matrix<T>& x, const Matrix<T>& y) {
    if (x.rows != y.rows || g.rows != x.cols || g.cols != y.cols)
        throw InvalidArgument("accumulate_tn: shape mismatch");
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t a = 0; a < x.cols; ++a) {
            const T xa = x.data[i * x.cols + a];
            if (xa == T(0)) continue;
            T* ga = g.data.data() + a * g.cols;
            const T* yi = y.data.data() + i * y.cols;
            for (std::size_t b = 0; b < y.cols; ++b) ga[b] += xa * yi[b];
        }
    }
}

template <class T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw InvalidArgument("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace domada
