#pragma once

#include <cmath>
#include <vector>

#include "repst/linalg.hpp"
#include "repst/matrix.hpp"
#include "repst/rng.hpp"
#include "repst/tensor.hpp"

namespace repst_test {

inline repst::Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
    repst::Rng rng(seed);
    repst::Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.gaussian();
    }
    return m;
}

inline double max_abs_diff(const repst::Matrix& a, const repst::Matrix& b) {
    double d = 0.0;
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) d = std::max(d, std::abs(a(i, j) - b(i, j)));
    }
    return d;
}

inline double max_abs_diff(const repst::Tensor& a, const repst::Tensor& b) {
    double d = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

// Frobenius distance of U diag(s) Vt from m, relative to max(1, |m|_F).
inline double svd_reconstruction_error(const repst::Matrix& m, const repst::linalg::SvdResult& d) {
    const int r = static_cast<int>(d.s.size());
    repst::Matrix rec(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        for (int k = 0; k < r; ++k) {
            const double us = d.u(i, k) * d.s[k];
            for (int j = 0; j < m.cols(); ++j) rec(i, j) += us * d.vt(k, j);
        }
    }
    double err = 0.0, ref = 0.0;
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            const double e = rec(i, j) - m(i, j);
            err += e * e;
            ref += m(i, j) * m(i, j);
        }
    }
    return std::sqrt(err) / std::max(1.0, std::sqrt(ref));
}

inline double max_orthonormality_defect_cols(const repst::Matrix& u) {
    double d = 0.0;
    for (int a = 0; a < u.cols(); ++a) {
        for (int b = 0; b <= a; ++b) {
            double dot = 0.0;
            for (int i = 0; i < u.rows(); ++i) dot += u(i, a) * u(i, b);
            d = std::max(d, std::abs(dot - (a == b ? 1.0 : 0.0)));
        }
    }
    return d;
}

}  // namespace repst_test
