#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace csda {

// Dense row-major matrix of doubles. All shape mismatches throw
// std::invalid_argument; element access is unchecked.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("Matrix: data size does not match shape");
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t r = 0;
        for (const auto& row : rows) {
            if (row.size() != m.cols_)
                throw std::invalid_argument("Matrix::from_rows: ragged rows");
            std::size_t c = 0;
            for (double v : row) m(r, c++) = v;
            ++r;
        }
        return m;
    }

    static Matrix row_vector(const std::vector<double>& v) {
        return Matrix(1, v.size(), v);
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }
    std::vector<double>& values() { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// ---------------------------------------------------------------------------
// Value kernels. These are shared between the autodiff forward pass and the
// plain inference path so that both produce bit-identical results.
// ---------------------------------------------------------------------------

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dims " + shape_str(a) + " * " + shape_str(b));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j)
                c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Matrix add_rowwise(const Matrix& a, const Matrix& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw std::invalid_argument("add_rowwise: bias must be 1x" + std::to_string(a.cols()));
    Matrix c = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            c(i, j) += bias(0, j);
    return c;
}

inline Matrix tanh_elem(const Matrix& a) {
    Matrix c = a;
    for (double& v : c.values()) v = std::tanh(v);
    return c;
}

inline Matrix sigmoid_elem(const Matrix& a) {
    Matrix c = a;
    for (double& v : c.values()) v = 1.0 / (1.0 + std::exp(-v));
    return c;
}

// Row-wise softmax with max-subtraction for stability.
inline Matrix softmax_rows(const Matrix& a) {
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double mx = a(i, 0);
        for (std::size_t j = 1; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            c(i, j) = std::exp(a(i, j) - mx);
            sum += c(i, j);
        }
        for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) /= sum;
    }
    return c;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw std::invalid_argument("concat_cols: row mismatch " + shape_str(a) + " | " + shape_str(b));
    Matrix c(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j);
        for (std::size_t j = 0; j < b.cols(); ++j) c(i, a.cols() + j) = b(i, j);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Seeded RNG with hand-rolled distributions. std::*_distribution output is
// implementation-defined, so we generate draws ourselves to keep datasets and
// initializations stable under one seed.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Unbiased integer in [0, n).
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::bounded: n must be positive");
        const std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r = eng_();
        while (r >= lim) r = eng_();
        return r % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[bounded(i)]);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

// Cholesky factor L (lower triangular) of a symmetric positive-definite
// matrix. Throws std::invalid_argument if the input is not symmetric SPD.
inline Matrix cholesky(const Matrix& a) {
    if (a.rows() != a.cols())
        throw std::invalid_argument("cholesky: matrix must be square");
    const std::size_t n = a.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-12 * (1.0 + std::abs(a(i, j))))
                throw std::invalid_argument("cholesky: matrix is not symmetric");
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0)
                    throw std::invalid_argument("cholesky: matrix is not positive-definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

}  // namespace csda
