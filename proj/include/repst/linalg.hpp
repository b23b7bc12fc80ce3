#pragma once

#include <complex>
#include <vector>

#include "repst/matrix.hpp"

namespace repst {
namespace linalg {

struct SvdResult {
    Matrix u;               // rows x r, orthonormal columns
    std::vector<double> s;  // length r = min(rows, cols), non-increasing, >= 0
    Matrix vt;              // r x cols, orthonormal rows
};

// Thin SVD by one-sided Jacobi rotations. Throws NumericalFailure if the
// sweep budget is exhausted before convergence.
SvdResult svd(const Matrix& m);

struct EigResult {
    ComplexVector lambdas;  // length n; complex conjugate pairs adjacent, Im>0 first
    CMatrix vectors;        // n x n; column c is the unit eigenvector for lambdas[c]
};

// Eigendecomposition of a general square matrix: Hessenberg reduction plus
// Francis double-shift QR for the spectrum, inverse iteration for vectors.
EigResult eig(const Matrix& m);

// Moore-Penrose pseudoinverse via SVD; singular values below rcond * s_max
// are treated as zero.
Matrix pinv(const Matrix& m, double rcond);

// Solve a x = b for square complex a by LU with partial pivoting.
// Near-zero pivots are nudged so the solve always produces a finite result
// (inverse-iteration callers rely on that).
ComplexVector lu_solve(CMatrix a, ComplexVector b);

// Least-squares solution of a (rows x cols, rows >= cols) against b via the
// normal equations.
ComplexVector lstsq(const CMatrix& a, const ComplexVector& b);

}  // namespace linalg
}  // namespace repst
