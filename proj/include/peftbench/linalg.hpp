#pragma once

#include <cstddef>
#include <vector>

#include "peftbench/tensor.hpp"

namespace peftbench {

// Row-major dense matrix for the small factorizations below.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix from_tensor(const Tensor& t);  // rank-2 tensors only

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    Matrix transposed() const;
    Tensor to_tensor() const;
};

Matrix matmul(const Matrix& a, const Matrix& b);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Thin SVD W = U diag(sigma) Vᵀ with k = min(m, n): U is m×k, V is n×k,
// sigma non-increasing and non-negative.
struct Svd {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;

    Matrix reconstruct() const;
};

// One-sided Jacobi (Hestenes). Sweeps until every normalized off-diagonal
// Gram entry |<a_p, a_q>| / (|a_p| |a_q|) is below 1e-12.
Svd svd_small(const Matrix& w);

// Symmetric eigendecomposition by cyclic Jacobi rotations; eigenvalues in
// non-increasing order, eigenvectors as columns.
struct SymEigen {
    std::vector<double> values;
    Matrix vectors;
};
SymEigen sym_eigen(const Matrix& s);

// Principal square root of a symmetric PSD matrix; negative eigenvalues
// produced by round-off are clamped to 0.
Matrix sqrtm_psd(const Matrix& s);

}  // namespace peftbench
