#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace rmfnn {

/// Dense row-major matrix of doubles. Small sizes only; no BLAS.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }

    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double* row(std::size_t i) { return data.data() + i * cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

/// y = W x (y must have W.rows entries, x W.cols entries).
inline void matvec(const Matrix& w, const double* x, double* y) {
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double* wi = w.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) acc += wi[j] * x[j];
        y[i] = acc;
    }
}

/// out += W^T d (out has W.cols entries, d W.rows entries).
inline void matvec_transposed_add(const Matrix& w, const double* d, double* out) {
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double di = d[i];
        const double* wi = w.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) out[j] += di * wi[j];
    }
}

/// Pairwise (cascade) summation: deterministic in index order and far more
/// accurate than naive left-to-right accumulation on long streams.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 32) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace rmfnn
