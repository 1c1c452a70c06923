#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace collapse {

// Dense row-major matrix. Rows are samples (or output neurons for weights).
template <class T>
struct Mat {
    std::vector<T> data;
    std::size_t rows = 0, cols = 0;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, T fill = T(0)) : data(r * c, fill), rows(r), cols(c) {}

    T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    T* row(std::size_t i) { return data.data() + i * cols; }
    const T* row(std::size_t i) const { return data.data() + i * cols; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

using MatD = Mat<double>;
using VecD = std::vector<double>;

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class T>
T norm2(const T* a, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[i] * a[i];
    return std::sqrt(s);
}

inline double dot(const VecD& a, const VecD& b) {
    require(a.size() == b.size(), "dot: size mismatch");
    return dot(a.data(), b.data(), a.size());
}

inline double norm2(const VecD& a) { return norm2(a.data(), a.size()); }

// C = A * B^T.  A is [m x k], B is [n x k], C is [m x n].
// Row-against-row dot products; this is the forward pass layout
// (activations [batch x in] times weights [out x in]).
template <class T>
void matmul_abt(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    require(a.cols == b.cols, "matmul_abt: inner dim mismatch");
    c = Mat<T>(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* ai = a.row(i);
        T* ci = c.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) ci[j] = dot(ai, b.row(j), a.cols);
    }
}

// C = A * B.  A is [m x k], B is [k x n], C is [m x n].
template <class T>
void matmul_ab(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    require(a.cols == b.rows, "matmul_ab: inner dim mismatch");
    c = Mat<T>(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* ai = a.row(i);
        T* ci = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T aik = ai[k];
            const T* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
}

// C = A^T * B.  A is [k x m], B is [k x n], C is [m x n].
// Gradient accumulation layout (deltas^T times activations).
template <class T>
void matmul_atb(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    require(a.rows == b.rows, "matmul_atb: inner dim mismatch");
    c = Mat<T>(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const T* ak = a.row(k);
        const T* bk = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const T aki = ak[i];
            T* ci = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
        }
    }
}

template <class T>
T frobenius_norm2(const Mat<T>& m) {
    T s = T(0);
    for (const T& v : m.data) s += v * v;
    return s;
}

template <class T>
bool all_finite(const Mat<T>& m) {
    for (const T& v : m.data)
        if (!std::isfinite(double(v))) return false;
    return true;
}

}  // namespace collapse
