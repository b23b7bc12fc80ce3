#include "repst/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "repst/rng.hpp"

namespace repst {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ContractViolation("matmul: shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
    }
    Matrix out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.vec()) s += v * v;
    return std::sqrt(s);
}

namespace linalg {
namespace {

constexpr int kJacobiSweepBudget = 64;
constexpr double kJacobiTol = 1e-15;

// One-sided Jacobi for rows >= cols. Returns U (rows x cols, columns of the
// rotated input normalized), singular values, and V (cols x cols).
void jacobi_svd_tall(Matrix a, Matrix& u, std::vector<double>& s, Matrix& v) {
    const int m = a.rows();
    const int n = a.cols();
    v = Matrix::identity(n);

    bool converged = false;
    for (int sweep = 0; sweep < kJacobiSweepBudget && !converged; ++sweep) {
        converged = true;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int i = 0; i < m; ++i) {
                    alpha += a(i, p) * a(i, p);
                    beta += a(i, q) * a(i, q);
                    gamma += a(i, p) * a(i, q);
                }
                if (std::abs(gamma) <= kJacobiTol * std::sqrt(alpha * beta) || alpha == 0.0 ||
                    beta == 0.0) {
                    continue;
                }
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = c * t;
                for (int i = 0; i < m; ++i) {
                    const double ap = a(i, p), aq = a(i, q);
                    a(i, p) = c * ap - sn * aq;
                    a(i, q) = sn * ap + c * aq;
                }
                for (int i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - sn * vq;
                    v(i, q) = sn * vp + c * vq;
                }
            }
        }
    }
    if (!converged) {
        throw NumericalFailure("svd: Jacobi sweeps did not converge within budget");
    }

    s.assign(n, 0.0);
    for (int j = 0; j < n; ++j) {
        double norm = 0.0;
        for (int i = 0; i < m; ++i) norm += a(i, j) * a(i, j);
        s[j] = std::sqrt(norm);
    }

    // Sort non-increasing, permuting columns of a and v alongside.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return s[x] > s[y]; });

    Matrix a_sorted(m, n), v_sorted(n, n);
    std::vector<double> s_sorted(n);
    for (int j = 0; j < n; ++j) {
        s_sorted[j] = s[order[j]];
        for (int i = 0; i < m; ++i) a_sorted(i, j) = a(i, order[j]);
        for (int i = 0; i < n; ++i) v_sorted(i, j) = v(i, order[j]);
    }
    s = std::move(s_sorted);
    v = std::move(v_sorted);

    // Normalize columns; complete an orthonormal basis for the null columns.
    u = Matrix(m, n);
    const double smax = s.empty() ? 0.0 : s[0];
    const double tiny = std::max(smax, 1.0) * 1e-300;
    for (int j = 0; j < n; ++j) {
        if (s[j] > tiny) {
            for (int i = 0; i < m; ++i) u(i, j) = a_sorted(i, j) / s[j];
        } else {
            s[j] = 0.0;
            // Pick the coordinate axis least represented by earlier columns.
            int best_axis = 0;
            double best_norm = -1.0;
            std::vector<double> best_col;
            for (int axis = 0; axis < m; ++axis) {
                std::vector<double> cand(m, 0.0);
                cand[axis] = 1.0;
                for (int k = 0; k < j; ++k) {
                    double dot = 0.0;
                    for (int i = 0; i < m; ++i) dot += cand[i] * u(i, k);
                    for (int i = 0; i < m; ++i) cand[i] -= dot * u(i, k);
                }
                double norm = 0.0;
                for (double x : cand) norm += x * x;
                if (norm > best_norm) {
                    best_norm = norm;
                    best_axis = axis;
                    best_col = std::move(cand);
                }
            }
            (void)best_axis;
            const double norm = std::sqrt(best_norm);
            for (int i = 0; i < m; ++i) u(i, j) = best_col[i] / norm;
        }
    }
}

}  // namespace

SvdResult svd(const Matrix& m) {
    if (m.rows() < 1 || m.cols() < 1) {
        throw ContractViolation("svd: rows and cols must be >= 1, got " + m.shape_str());
    }
    if (!m.all_finite()) {
        throw ContractViolation("svd: input has non-finite entries");
    }

    SvdResult r;
    if (m.rows() >= m.cols()) {
        Matrix u, v;
        jacobi_svd_tall(m, u, r.s, v);
        r.u = std::move(u);
        r.vt = transpose(v);
    } else {
        Matrix u, v;
        jacobi_svd_tall(transpose(m), u, r.s, v);
        r.u = std::move(v);
        r.vt = transpose(u);
    }
    return r;
}

Matrix pinv(const Matrix& m, double rcond) {
    if (rcond <= 0.0) {
        throw ContractViolation("pinv: rcond must be > 0");
    }
    SvdResult d = svd(m);
    const int r = static_cast<int>(d.s.size());
    const double cutoff = rcond * (r > 0 ? d.s[0] : 0.0);
    // V * diag(1/s) * U^T
    Matrix out(m.cols(), m.rows());
    for (int j = 0; j < r; ++j) {
        if (d.s[j] <= cutoff || d.s[j] == 0.0) continue;
        const double inv = 1.0 / d.s[j];
        for (int i = 0; i < m.cols(); ++i) {
            const double vij = d.vt(j, i) * inv;
            if (vij == 0.0) continue;
            for (int k = 0; k < m.rows(); ++k) {
                out(i, k) += vij * d.u(k, j);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Eigendecomposition
// ---------------------------------------------------------------------------

namespace {

// Householder reduction to upper Hessenberg form (in place).
void hessenberg(Matrix& h) {
    const int n = h.rows();
    for (int k = 0; k < n - 2; ++k) {
        double scale = 0.0;
        for (int i = k + 1; i < n; ++i) scale += std::abs(h(i, k));
        if (scale == 0.0) continue;

        std::vector<double> v(n, 0.0);
        double norm2 = 0.0;
        for (int i = k + 1; i < n; ++i) {
            v[i] = h(i, k) / scale;
            norm2 += v[i] * v[i];
        }
        double alpha = std::sqrt(norm2);
        if (v[k + 1] > 0.0) alpha = -alpha;
        v[k + 1] -= alpha;
        double vnorm2 = 0.0;
        for (int i = k + 1; i < n; ++i) vnorm2 += v[i] * v[i];
        if (vnorm2 == 0.0) continue;

        // H <- (I - 2vv^T/v^Tv) H (I - 2vv^T/v^Tv)
        for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int i = k + 1; i < n; ++i) dot += v[i] * h(i, j);
            dot *= 2.0 / vnorm2;
            for (int i = k + 1; i < n; ++i) h(i, j) -= dot * v[i];
        }
        for (int i = 0; i < n; ++i) {
            double dot = 0.0;
            for (int j = k + 1; j < n; ++j) dot += h(i, j) * v[j];
            dot *= 2.0 / vnorm2;
            for (int j = k + 1; j < n; ++j) h(i, j) -= dot * v[j];
        }
        for (int i = k + 2; i < n; ++i) h(i, k) = 0.0;
        h(k + 1, k) = alpha * scale;
    }
}

void eig_2x2(double a, double b, double c, double d, cplx& l1, cplx& l2) {
    const double tr = a + d;
    const double det = a * d - b * c;
    const double disc = tr * tr / 4.0 - det;
    if (disc >= 0.0) {
        const double root = std::sqrt(disc);
        // Order the real pair deterministically, larger first.
        l1 = cplx(tr / 2.0 + root, 0.0);
        l2 = cplx(tr / 2.0 - root, 0.0);
    } else {
        const double im = std::sqrt(-disc);
        l1 = cplx(tr / 2.0, im);
        l2 = cplx(tr / 2.0, -im);
    }
}

// Francis double-shift QR on a Hessenberg matrix; eigenvalues only.
ComplexVector francis_eigenvalues(Matrix h) {
    const int n = h.rows();
    ComplexVector lam(n);
    int hi = n - 1;
    int iter_since_deflation = 0;
    const int max_total_iters = 60 * std::max(n, 1);
    int total_iters = 0;

    auto subdiag_negligible = [&](int i) {
        const double bound = 1e-15 * (std::abs(h(i - 1, i - 1)) + std::abs(h(i, i)));
        return std::abs(h(i, i - 1)) <= std::max(bound, 1e-300);
    };

    while (hi >= 0) {
        // Find the start of the active block.
        int lo = hi;
        while (lo > 0 && !subdiag_negligible(lo)) --lo;
        if (lo > 0) h(lo, lo - 1) = 0.0;

        if (lo == hi) {
            lam[hi] = cplx(h(hi, hi), 0.0);
            --hi;
            iter_since_deflation = 0;
            continue;
        }
        if (lo == hi - 1) {
            cplx l1, l2;
            eig_2x2(h(lo, lo), h(lo, hi), h(hi, lo), h(hi, hi), l1, l2);
            // Im>0 member first so conjugate pairs sit adjacent.
            lam[lo] = l1;
            lam[hi] = l2;
            hi -= 2;
            iter_since_deflation = 0;
            continue;
        }

        if (++total_iters > max_total_iters) {
            throw NumericalFailure("eig: QR iteration budget exhausted");
        }

        // Shift from the trailing 2x2; exceptional shift if stalled.
        double s_tr, s_det;
        if (iter_since_deflation > 0 && iter_since_deflation % 12 == 0) {
            const double w = std::abs(h(hi, hi - 1)) + std::abs(h(hi - 1, hi - 2));
            s_tr = 1.5 * w;
            s_det = w * w;
        } else {
            s_tr = h(hi - 1, hi - 1) + h(hi, hi);
            s_det = h(hi - 1, hi - 1) * h(hi, hi) - h(hi - 1, hi) * h(hi, hi - 1);
        }
        ++iter_since_deflation;

        double x = h(lo, lo) * h(lo, lo) + h(lo, lo + 1) * h(lo + 1, lo) - s_tr * h(lo, lo) + s_det;
        double y = h(lo + 1, lo) * (h(lo, lo) + h(lo + 1, lo + 1) - s_tr);
        double z = (lo + 2 <= hi) ? h(lo + 2, lo + 1) * h(lo + 1, lo) : 0.0;

        for (int k = lo; k <= hi - 2; ++k) {
            // Householder on (x, y, z).
            double col[3] = {x, y, z};
            double scale = std::abs(col[0]) + std::abs(col[1]) + std::abs(col[2]);
            if (scale != 0.0) {
                col[0] /= scale;
                col[1] /= scale;
                col[2] /= scale;
                double norm = std::sqrt(col[0] * col[0] + col[1] * col[1] + col[2] * col[2]);
                if (col[0] > 0.0) norm = -norm;
                if (norm != 0.0) {
                    col[0] -= norm;
                    const double vnorm2 = col[0] * col[0] + col[1] * col[1] + col[2] * col[2];
                    if (vnorm2 > 0.0) {
                        const int rmax = k + 2;
                        for (int j = std::max(k - 1, 0); j < n; ++j) {
                            double dot = 0.0;
                            for (int i = k; i <= rmax; ++i) dot += col[i - k] * h(i, j);
                            dot *= 2.0 / vnorm2;
                            for (int i = k; i <= rmax; ++i) h(i, j) -= dot * col[i - k];
                        }
                        for (int i = 0; i <= std::min(hi, k + 3); ++i) {
                            double dot = 0.0;
                            for (int j = k; j <= rmax; ++j) dot += h(i, j) * col[j - k];
                            dot *= 2.0 / vnorm2;
                            for (int j = k; j <= rmax; ++j) h(i, j) -= dot * col[j - k];
                        }
                    }
                }
            }
            x = h(k + 1, k);
            y = h(k + 2, k);
            z = (k + 3 <= hi) ? h(k + 3, k) : 0.0;
        }

        // Final Givens on (x, y) for the last column of the bulge.
        {
            const int k = hi - 1;
            const double r = std::hypot(x, y);
            if (r != 0.0) {
                const double c = x / r, s = y / r;
                for (int j = std::max(k - 1, 0); j < n; ++j) {
                    const double t1 = h(k, j), t2 = h(k + 1, j);
                    h(k, j) = c * t1 + s * t2;
                    h(k + 1, j) = -s * t1 + c * t2;
                }
                for (int i = 0; i <= hi; ++i) {
                    const double t1 = h(i, k), t2 = h(i, k + 1);
                    h(i, k) = c * t1 + s * t2;
                    h(i, k + 1) = -s * t1 + c * t2;
                }
            }
        }

        // Clean negligible subdiagonals inside the block.
        for (int i = lo + 1; i <= hi; ++i) {
            if (subdiag_negligible(i)) h(i, i - 1) = 0.0;
        }
    }
    return lam;
}

ComplexVector inverse_iteration(const Matrix& a, cplx lambda, std::uint64_t start_tag,
                                const std::vector<ComplexVector>& deflate_against,
                                double scale) {
    const int n = a.rows();
    CMatrix shifted(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) shifted(i, j) = cplx(a(i, j), 0.0) - (i == j ? lambda : 0.0);
    }

    Rng rng(splitmix64(0x5EEDF00DULL ^ start_tag));
    ComplexVector v(n);
    const bool real_path = (lambda.imag() == 0.0);
    for (int i = 0; i < n; ++i) {
        v[i] = real_path ? cplx(rng.gaussian(), 0.0) : cplx(rng.gaussian(), rng.gaussian());
    }

    auto orthogonalize = [&](ComplexVector& x) {
        for (const auto& w : deflate_against) {
            cplx dot(0.0, 0.0);
            for (int i = 0; i < n; ++i) dot += std::conj(w[i]) * x[i];
            for (int i = 0; i < n; ++i) x[i] -= dot * w[i];
        }
    };
    auto normalize = [&](ComplexVector& x) {
        double amax = 0.0;
        for (const auto& e : x) amax = std::max(amax, std::abs(e));
        if (amax == 0.0 || !std::isfinite(amax)) return false;
        for (auto& e : x) e /= amax;
        double norm = 0.0;
        for (const auto& e : x) norm += std::norm(e);
        norm = std::sqrt(norm);
        for (auto& e : x) e /= norm;
        return true;
    };
    auto residual = [&](const ComplexVector& x) {
        double r = 0.0;
        for (int i = 0; i < n; ++i) {
            cplx acc(0.0, 0.0);
            for (int j = 0; j < n; ++j) acc += cplx(a(i, j), 0.0) * x[j];
            acc -= lambda * x[i];
            r += std::norm(acc);
        }
        return std::sqrt(r);
    };

    orthogonalize(v);
    if (!normalize(v)) {
        v.assign(n, cplx(0.0, 0.0));
        v[0] = cplx(1.0, 0.0);
    }

    ComplexVector best = v;
    double best_res = residual(v);
    for (int it = 0; it < 8; ++it) {
        ComplexVector x = lu_solve(shifted, v);
        orthogonalize(x);
        if (!normalize(x)) break;
        v = x;
        const double res = residual(v);
        if (res < best_res) {
            best_res = res;
            best = v;
        }
        if (best_res <= 1e-13 * std::max(scale, 1e-30)) break;
    }

    // Deterministic phase: make the largest-magnitude entry real positive.
    int imax = 0;
    double amax = 0.0;
    for (int i = 0; i < n; ++i) {
        if (std::abs(best[i]) > amax) {
            amax = std::abs(best[i]);
            imax = i;
        }
    }
    if (amax > 0.0) {
        const cplx phase = std::conj(best[imax]) / amax;
        for (auto& e : best) e *= phase;
    }
    return best;
}

}  // namespace

ComplexVector lu_solve(CMatrix a, ComplexVector b) {
    const int n = a.rows();
    if (a.cols() != n || static_cast<int>(b.size()) != n) {
        throw ContractViolation("lu_solve: dimension mismatch");
    }
    double scale = 0.0;
    for (const auto& e : a.vec()) scale = std::max(scale, std::abs(e));
    const double tiny = std::max(scale, 1e-30) * 2.2e-16;

    for (int k = 0; k < n; ++k) {
        int piv = k;
        double pmax = std::abs(a(k, k));
        for (int i = k + 1; i < n; ++i) {
            if (std::abs(a(i, k)) > pmax) {
                pmax = std::abs(a(i, k));
                piv = i;
            }
        }
        if (piv != k) {
            for (int j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
            std::swap(b[k], b[piv]);
        }
        if (std::abs(a(k, k)) < tiny) {
            a(k, k) = cplx(tiny, 0.0);
        }
        for (int i = k + 1; i < n; ++i) {
            const cplx f = a(i, k) / a(k, k);
            a(i, k) = f;
            for (int j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
            b[i] -= f * b[k];
        }
    }
    for (int i = n - 1; i >= 0; --i) {
        cplx sum = b[i];
        for (int j = i + 1; j < n; ++j) sum -= a(i, j) * b[j];
        b[i] = sum / a(i, i);
    }
    return b;
}

ComplexVector lstsq(const CMatrix& a, const ComplexVector& b) {
    const int m = a.rows();
    const int n = a.cols();
    if (static_cast<int>(b.size()) != m) {
        throw ContractViolation("lstsq: rhs length mismatch");
    }
    CMatrix ata(n, n);
    ComplexVector atb(n, cplx(0.0, 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            cplx acc(0.0, 0.0);
            for (int k = 0; k < m; ++k) acc += std::conj(a(k, i)) * a(k, j);
            ata(i, j) = acc;
        }
        cplx acc(0.0, 0.0);
        for (int k = 0; k < m; ++k) acc += std::conj(a(k, i)) * b[k];
        atb[i] = acc;
    }
    return lu_solve(ata, atb);
}

EigResult eig(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw ContractViolation("eig: matrix must be square, got " + m.shape_str());
    }
    if (!m.all_finite()) {
        throw ContractViolation("eig: input has non-finite entries");
    }
    const int n = m.rows();
    EigResult out;
    out.vectors = CMatrix(n, n);
    if (n == 0) return out;

    Matrix h = m;
    hessenberg(h);
    out.lambdas = francis_eigenvalues(std::move(h));

    const double scale = frobenius_norm(m);
    const double group_tol = 1e-8 * std::max(scale, 1e-30);

    std::vector<ComplexVector> found(n);
    for (int c = 0; c < n; ++c) {
        const cplx lam = out.lambdas[c];
        if (lam.imag() < 0.0) {
            // Conjugate partner of the previous eigenvalue.
            bool paired = false;
            if (c > 0 && std::abs(out.lambdas[c - 1] - std::conj(lam)) <=
                             1e-12 * std::max(std::abs(lam), 1.0)) {
                found[c].resize(n);
                for (int i = 0; i < n; ++i) found[c][i] = std::conj(found[c - 1][i]);
                paired = true;
            }
            if (paired) continue;
        }
        // Deflate against previously found vectors of (numerically) equal
        // eigenvalues so repeated roots get independent vectors.
        std::vector<ComplexVector> group;
        for (int k = 0; k < c; ++k) {
            if (std::abs(out.lambdas[k] - lam) <= group_tol) group.push_back(found[k]);
        }
        found[c] = inverse_iteration(m, lam, static_cast<std::uint64_t>(c) * 0x9E37ULL + 17ULL,
                                     group, scale);
    }
    for (int c = 0; c < n; ++c) {
        for (int i = 0; i < n; ++i) out.vectors(i, c) = found[c][i];
    }
    return out;
}

}  // namespace linalg
}  // namespace repst
