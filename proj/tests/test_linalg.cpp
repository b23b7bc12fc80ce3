#include <algorithm>
#include <cmath>
#include <complex>

#include "doctest.h"
#include "repst/linalg.hpp"
#include "test_util.hpp"

using namespace repst;
using repst_test::max_abs_diff;
using repst_test::max_orthonormality_defect_cols;
using repst_test::random_matrix;
using repst_test::svd_reconstruction_error;

namespace {

double eig_residual(const Matrix& m, const linalg::EigResult& e, int c) {
    const int n = m.rows();
    double r = 0.0, vnorm = 0.0;
    for (int i = 0; i < n; ++i) {
        cplx acc(0.0, 0.0);
        for (int j = 0; j < n; ++j) acc += m(i, j) * e.vectors(j, c);
        acc -= e.lambdas[c] * e.vectors(i, c);
        r += std::norm(acc);
        vnorm += std::norm(e.vectors(i, c));
    }
    return std::sqrt(r) / std::max(std::sqrt(vnorm), 1e-300);
}

}  // namespace

TEST_SUITE_BEGIN("compute");

TEST_CASE("svd identity and diagonal") {
    auto d = linalg::svd(Matrix::identity(3));
    REQUIRE(d.s.size() == 3);
    for (double s : d.s) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

    Matrix diag(2, 2);
    diag(0, 0) = 3.0;
    diag(1, 1) = 1.0;
    auto d2 = linalg::svd(diag);
    CHECK(d2.s[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(d2.s[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("svd reconstructs seeded 5x3 input") {
    Matrix m = random_matrix(5, 3, 0xA11CE);
    auto d = linalg::svd(m);
    CHECK(svd_reconstruction_error(m, d) <= 1e-8);
    CHECK(max_orthonormality_defect_cols(d.u) <= 1e-8);
    CHECK(max_orthonormality_defect_cols(transpose(d.vt)) <= 1e-8);
}

TEST_CASE("svd ordering, reconstruction, orthonormality on random sizes up to 64") {
    const int sizes[][2] = {{1, 1}, {2, 7}, {7, 2}, {16, 16}, {33, 9}, {64, 64}, {24, 64}};
    std::uint64_t seed = 7;
    for (auto [r, c] : sizes) {
        Matrix m = random_matrix(r, c, seed++);
        auto d = linalg::svd(m);
        for (std::size_t i = 0; i + 1 < d.s.size(); ++i) CHECK(d.s[i] >= d.s[i + 1]);
        for (double s : d.s) CHECK(s >= 0.0);
        CHECK(svd_reconstruction_error(m, d) <= 1e-8);
        CHECK(max_orthonormality_defect_cols(d.u) <= 1e-8);
        CHECK(max_orthonormality_defect_cols(transpose(d.vt)) <= 1e-8);
    }
}

TEST_CASE("svd handles rank deficiency and the zero matrix") {
    // Rank-1 outer product.
    Matrix m(4, 3);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) m(i, j) = (i + 1.0) * (j + 1.0);
    }
    auto d = linalg::svd(m);
    CHECK(d.s[1] <= 1e-10 * d.s[0]);
    CHECK(max_orthonormality_defect_cols(d.u) <= 1e-8);
    CHECK(svd_reconstruction_error(m, d) <= 1e-8);

    Matrix z(3, 2);
    auto dz = linalg::svd(z);
    CHECK(dz.s[0] == 0.0);
    CHECK(max_orthonormality_defect_cols(dz.u) <= 1e-8);
}

TEST_CASE("svd rejects bad input") {
    Matrix m(2, 2);
    m(0, 0) = std::nan("");
    CHECK_THROWS_AS(linalg::svd(m), ContractViolation);
}

TEST_CASE("pinv of rank-deficient diagonal") {
    Matrix m(2, 2);
    m(0, 0) = 2.0;
    auto p = linalg::pinv(m, 1e-12);
    CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(p(0, 1)) <= 1e-14);
    CHECK(std::abs(p(1, 0)) <= 1e-14);
    CHECK(std::abs(p(1, 1)) <= 1e-14);
}

TEST_CASE("pinv of an orthogonal matrix is its transpose") {
    const double th = 0.83;
    Matrix q(2, 2);
    q(0, 0) = std::cos(th);
    q(0, 1) = -std::sin(th);
    q(1, 0) = std::sin(th);
    q(1, 1) = std::cos(th);
    auto p = linalg::pinv(q, 1e-12);
    CHECK(max_abs_diff(p, transpose(q)) <= 1e-10);
}

TEST_CASE("pinv satisfies the four Penrose conditions on seeded 4x6") {
    Matrix a = random_matrix(4, 6, 0xBEEF);
    Matrix p = linalg::pinv(a, 1e-12);
    Matrix apa = matmul(matmul(a, p), a);
    Matrix pap = matmul(matmul(p, a), p);
    Matrix ap = matmul(a, p);
    Matrix pa = matmul(p, a);
    CHECK(max_abs_diff(apa, a) <= 1e-8);
    CHECK(max_abs_diff(pap, p) <= 1e-8);
    CHECK(max_abs_diff(ap, transpose(ap)) <= 1e-8);
    CHECK(max_abs_diff(pa, transpose(pa)) <= 1e-8);
}

TEST_CASE("eig of the rotation matrix gives +-i") {
    Matrix m(2, 2);
    m(0, 1) = -1.0;
    m(1, 0) = 1.0;
    auto e = linalg::eig(m);
    REQUIRE(e.lambdas.size() == 2);
    CHECK(std::abs(e.lambdas[0] - cplx(0.0, 1.0)) <= 1e-10);
    CHECK(std::abs(e.lambdas[1] - cplx(0.0, -1.0)) <= 1e-10);
    CHECK(eig_residual(m, e, 0) <= 1e-10);
    CHECK(eig_residual(m, e, 1) <= 1e-10);
}

TEST_CASE("eig of a diagonal matrix gives axis eigenvectors") {
    Matrix m(2, 2);
    m(0, 0) = 2.0;
    m(1, 1) = 5.0;
    auto e = linalg::eig(m);
    std::vector<double> vals = {e.lambdas[0].real(), e.lambdas[1].real()};
    std::sort(vals.begin(), vals.end());
    CHECK(vals[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(vals[1] == doctest::Approx(5.0).epsilon(1e-12));
    for (int c = 0; c < 2; ++c) {
        const int axis = (std::abs(e.lambdas[c].real() - 2.0) < 1e-9) ? 0 : 1;
        CHECK(std::abs(e.vectors(axis, c)) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(std::abs(e.vectors(1 - axis, c)) <= 1e-10);
    }
}

TEST_CASE("eig of the companion matrix of (z-1)(z-2)(z-3)") {
    // z^3 - 6 z^2 + 11 z - 6
    Matrix m(3, 3);
    m(0, 2) = 6.0;
    m(1, 0) = 1.0;
    m(1, 2) = -11.0;
    m(2, 1) = 1.0;
    m(2, 2) = 6.0;
    auto e = linalg::eig(m);
    std::vector<double> vals;
    for (auto l : e.lambdas) {
        CHECK(std::abs(l.imag()) <= 1e-8);
        vals.push_back(l.real());
    }
    std::sort(vals.begin(), vals.end());
    CHECK(vals[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(vals[1] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(vals[2] == doctest::Approx(3.0).epsilon(1e-8));
}

TEST_CASE("eig residual and pairing properties on random matrices up to 32") {
    for (int n : {2, 3, 5, 8, 13, 21, 32}) {
        Matrix m = random_matrix(n, n, 0xE16 + static_cast<std::uint64_t>(n));
        auto e = linalg::eig(m);
        const double mnorm = frobenius_norm(m);
        for (int c = 0; c < n; ++c) {
            CHECK(eig_residual(m, e, c) <= 1e-6 * mnorm);
            double vnorm = 0.0;
            for (int i = 0; i < n; ++i) vnorm += std::norm(e.vectors(i, c));
            CHECK(std::sqrt(vnorm) == doctest::Approx(1.0).epsilon(1e-9));
        }
        // Complex eigenvalues appear in adjacent conjugate pairs.
        for (int c = 0; c < n; ++c) {
            if (e.lambdas[c].imag() > 0.0) {
                REQUIRE(c + 1 < n);
                CHECK(std::abs(e.lambdas[c + 1] - std::conj(e.lambdas[c])) <=
                      1e-9 * std::max(1.0, std::abs(e.lambdas[c])));
            }
        }
    }
}

TEST_CASE("eig handles repeated eigenvalues with independent vectors") {
    Matrix m = Matrix::identity(3);
    auto e = linalg::eig(m);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(e.lambdas[c] - 1.0) <= 1e-10);
    // Vectors should be mutually orthogonal thanks to in-group deflation.
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < a; ++b) {
            cplx dot(0.0, 0.0);
            for (int i = 0; i < 3; ++i) dot += std::conj(e.vectors(i, a)) * e.vectors(i, b);
            CHECK(std::abs(dot) <= 1e-8);
        }
    }
}

TEST_CASE("lu_solve and lstsq on complex systems") {
    CMatrix a(2, 2);
    a(0, 0) = cplx(2.0, 1.0);
    a(0, 1) = cplx(0.0, -1.0);
    a(1, 0) = cplx(1.0, 0.0);
    a(1, 1) = cplx(3.0, 2.0);
    ComplexVector x_true = {cplx(1.0, -2.0), cplx(0.5, 0.25)};
    ComplexVector b(2);
    for (int i = 0; i < 2; ++i) {
        b[i] = a(i, 0) * x_true[0] + a(i, 1) * x_true[1];
    }
    auto x = linalg::lu_solve(a, b);
    CHECK(std::abs(x[0] - x_true[0]) <= 1e-12);
    CHECK(std::abs(x[1] - x_true[1]) <= 1e-12);

    // Overdetermined consistent system recovers the generator exactly.
    CMatrix tall(4, 2);
    Rng rng(99);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 2; ++j) tall(i, j) = cplx(rng.gaussian(), rng.gaussian());
    }
    ComplexVector rhs(4);
    for (int i = 0; i < 4; ++i) rhs[i] = tall(i, 0) * x_true[0] + tall(i, 1) * x_true[1];
    auto ls = linalg::lstsq(tall, rhs);
    CHECK(std::abs(ls[0] - x_true[0]) <= 1e-10);
    CHECK(std::abs(ls[1] - x_true[1]) <= 1e-10);
}

TEST_SUITE_END();
