#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "corthick/errors.hpp"

namespace corthick {

/// Minimal dense row-major matrix. Covariances here are at most a few
/// dozen rows, so a self-contained factorization beats pulling in a BLAS.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

  private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
class Cholesky {
  public:
    Cholesky() = default;

    /// Throws NotPositiveDefinite if a pivot is not strictly positive.
    explicit Cholesky(const Matrix& a) : n_(a.rows()), l_(a.rows(), a.rows()) {
        if (a.rows() != a.cols()) throw NotPositiveDefinite("Cholesky: matrix not square");
        for (std::size_t j = 0; j < n_; ++j) {
            double d = a(j, j);
            for (std::size_t k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
            if (!(d > 0.0) || !std::isfinite(d))
                throw NotPositiveDefinite("Cholesky: non-positive pivot at row " +
                                          std::to_string(j));
            double ljj = std::sqrt(d);
            l_(j, j) = ljj;
            for (std::size_t i = j + 1; i < n_; ++i) {
                double s = a(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= l_(i, k) * l_(j, k);
                l_(i, j) = s / ljj;
            }
        }
    }

    std::size_t size() const { return n_; }
    const Matrix& lower() const { return l_; }

    /// Solves L y = b.
    std::vector<double> solveLower(const std::vector<double>& b) const {
        std::vector<double> y(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            double s = b[i];
            for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * y[k];
            y[i] = s / l_(i, i);
        }
        return y;
    }

    /// Solves A x = b via the two triangular solves.
    std::vector<double> solve(const std::vector<double>& b) const {
        std::vector<double> y = solveLower(b);
        for (std::size_t ii = n_; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t k = ii + 1; k < n_; ++k) s -= l_(k, ii) * y[k];
            y[ii] = s / l_(ii, ii);
        }
        return y;
    }

    /// log det A = 2 sum log L_ii.
    double logDet() const {
        double s = 0;
        for (std::size_t i = 0; i < n_; ++i) s += std::log(l_(i, i));
        return 2.0 * s;
    }

    /// Quadratic form b^T A^{-1} b.
    double quadForm(const std::vector<double>& b) const {
        std::vector<double> y = solveLower(b);
        double s = 0;
        for (double v : y) s += v * v;
        return s;
    }

  private:
    std::size_t n_ = 0;
    Matrix l_;
};

} // namespace corthick
