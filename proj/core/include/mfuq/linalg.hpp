#pragma once

#include <cstddef>
#include <vector>

namespace mfuq {

using Vec = std::vector<double>;

// Dense row-major matrix. Everything in this project is small (d <= 10 for
// inputs, a few hundred rows for pilot samples), so no BLAS is needed.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
    double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }

    Vec row_vec(int i) const { return Vec(row(i), row(i) + cols); }
    Vec col_vec(int j) const {
        Vec v(rows);
        for (int i = 0; i < rows; ++i) v[i] = (*this)(i, j);
        return v;
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Vec matvec(const Matrix& m, const Vec& x);
// y = M^T x
Vec matvec_t(const Matrix& m, const Vec& x);

double dot(const Vec& x, const Vec& y);
double norm2(const Vec& x);
double max_abs_diff(const Vec& x, const Vec& y);
double frobenius_norm(const Matrix& m);

struct SymmetricEigen {
    Vec eigenvalues;   // descending
    Matrix vectors;    // column j is the eigenvector for eigenvalues[j]
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
// `tol`. Input must be symmetric within `symmetry_tol`, otherwise throws.
SymmetricEigen jacobi_eigen_sym(const Matrix& m, double tol = 1e-12,
                                double symmetry_tol = 1e-10);

// Sample statistics with the 1/(n-1) convention.
double mean(const Vec& x);
double sample_variance(const Vec& x);
double sample_covariance(const Vec& x, const Vec& y);

// Pearson correlation; throws std::domain_error when either sample is constant.
double pearson(const Vec& x, const Vec& y);

}  // namespace mfuq
