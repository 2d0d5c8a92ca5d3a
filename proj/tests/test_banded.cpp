#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "annular/banded.hpp"

using namespace annular;

namespace {

Eigen::MatrixXd to_eigen(const BandedMatrix& A) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(A.rows(), A.cols());
    for (index_t i = 0; i < A.rows(); ++i)
        for (index_t j = 0; j < A.cols(); ++j) M(i, j) = A(i, j);
    return M;
}

Eigen::MatrixXd q_to_eigen(const HouseholderQ& Q) {
    const index_t n = Q.size();
    Eigen::MatrixXd M(n, n);
    for (index_t j = 0; j < n; ++j) {
        std::vector<double> e(static_cast<std::size_t>(n), 0.0);
        e[static_cast<std::size_t>(j)] = 1.0;
        Q.apply(e);
        for (index_t i = 0; i < n; ++i) M(i, j) = e[static_cast<std::size_t>(i)];
    }
    return M;
}

BandedMatrix random_spd_banded(index_t n, index_t bw, std::mt19937& rng) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    BandedMatrix A(n, n, bw, bw);
    for (index_t j = 0; j < n; ++j) {
        for (index_t i = std::max<index_t>(0, j - bw); i < j; ++i) {
            const double v = unif(rng);
            A.at(i, j) = v;
            A.at(j, i) = v;
        }
        A.at(j, j) = 2.0 * bw + 1.0 + unif(rng); // diagonally dominant
    }
    return A;
}

BandedMatrix random_sym_tridiag(index_t n, std::mt19937& rng) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    BandedMatrix X(n, n, 1, 1);
    for (index_t i = 0; i < n; ++i) {
        X.at(i, i) = unif(rng);
        if (i + 1 < n) {
            const double v = 0.3 + 0.5 * std::abs(unif(rng));
            X.at(i, i + 1) = v;
            X.at(i + 1, i) = v;
        }
    }
    return X;
}

// Shifted-Legendre Jacobi matrix on [0, 1].
BandedMatrix shifted_legendre_x(index_t n) {
    BandedMatrix X(n, n, 1, 1);
    for (index_t i = 0; i < n; ++i) {
        X.at(i, i) = 0.5;
        if (i + 1 < n) {
            const double k = static_cast<double>(i + 1);
            const double b = k / (2.0 * std::sqrt(4.0 * k * k - 1.0));
            X.at(i, i + 1) = b;
            X.at(i + 1, i) = b;
        }
    }
    return X;
}

} // namespace

TEST_CASE("banded storage and dense reconstruction agree") {
    std::mt19937 rng(7);
    BandedMatrix A = random_spd_banded(12, 2, rng);
    const Eigen::MatrixXd D = to_eigen(A);
    for (index_t i = 0; i < 12; ++i)
        for (index_t j = 0; j < 12; ++j) {
            REQUIRE(A(i, j) == D(i, j));
            if (std::abs(i - j) > 2) REQUIRE(A(i, j) == 0.0);
        }
    REQUIRE(A.measured_upper_bandwidth(1e-13) <= 2);

    // Banded product equals dense product entrywise.
    BandedMatrix B = random_spd_banded(12, 1, rng);
    const Eigen::MatrixXd P = to_eigen(A * B);
    REQUIRE((P - to_eigen(A) * to_eigen(B)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("banded_cholesky identity") {
    const BandedMatrix I = BandedMatrix::identity(9);
    const BandedMatrix R = banded_cholesky(I);
    REQUIRE((to_eigen(R) - to_eigen(I)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("banded_cholesky 2x2 frozen values") {
    BandedMatrix A(2, 2, 1, 1);
    A.at(0, 0) = 2.0;
    A.at(0, 1) = 1.0;
    A.at(1, 0) = 1.0;
    A.at(1, 1) = 2.0;
    const BandedMatrix R = banded_cholesky(A);
    // Dense oracle: R = [[sqrt(2), 1/sqrt(2)], [0, sqrt(3/2)]].
    REQUIRE_THAT(R(0, 0), Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-15));
    REQUIRE_THAT(R(0, 1), Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0), 1e-15));
    REQUIRE_THAT(R(1, 1), Catch::Matchers::WithinAbs(std::sqrt(1.5), 1e-15));
    REQUIRE(R(1, 0) == 0.0);
}

TEST_CASE("banded_cholesky rejects indefinite input") {
    BandedMatrix A(2, 2, 1, 1);
    A.at(0, 0) = 1.0;
    A.at(0, 1) = 2.0;
    A.at(1, 0) = 2.0;
    A.at(1, 1) = 1.0; // eigenvalues -1 and 3
    REQUIRE_THROWS_AS(banded_cholesky(A), NotPositiveDefinite);
}

TEST_CASE("banded_cholesky reconstruction vs dense oracle, N = 200") {
    std::mt19937 rng(11);
    for (index_t bw : {1, 2, 3}) {
        BandedMatrix A = random_spd_banded(200, bw, rng);
        const BandedMatrix R = banded_cholesky(A);
        REQUIRE(R.upper_bandwidth() == A.upper_bandwidth());
        for (index_t i = 0; i < 200; ++i) REQUIRE(R(i, i) > 0.0);

        const Eigen::MatrixXd Rd = to_eigen(R);
        const Eigen::MatrixXd err = Rd.transpose() * Rd - to_eigen(A);
        REQUIRE(err.cwiseAbs().maxCoeff() < 1e-12 * A.max_abs());

        // Match Eigen's LLT factor (transposed convention).
        Eigen::LLT<Eigen::MatrixXd> llt(to_eigen(A));
        const Eigen::MatrixXd Lo = llt.matrixL();
        REQUIRE((Rd - Lo.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("banded_qr identity and sign convention") {
    const BandedMatrix I = BandedMatrix::identity(5);
    auto [Q, R] = banded_qr(I);
    REQUIRE((q_to_eigen(Q) - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((to_eigen(R) - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() == 0.0);

    BandedMatrix D(2, 2, 0, 0);
    D.at(0, 0) = -1.0;
    D.at(1, 1) = 2.0;
    auto [Q2, R2] = banded_qr(D);
    // Positive phase forces the sign into Q.
    REQUIRE_THAT(R2(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-15));
    REQUIRE_THAT(R2(1, 1), Catch::Matchers::WithinAbs(2.0, 1e-15));
    const Eigen::MatrixXd Qd = q_to_eigen(Q2);
    REQUIRE_THAT(Qd(0, 0), Catch::Matchers::WithinAbs(-1.0, 1e-15));
    REQUIRE_THAT(Qd(1, 1), Catch::Matchers::WithinAbs(1.0, 1e-15));
}

TEST_CASE("banded_qr reconstructs 2I - X for shifted Legendre") {
    const index_t n = 4;
    const BandedMatrix A = shift_identity_minus(2.0, shifted_legendre_x(n));
    auto [Q, R] = banded_qr(A);
    const Eigen::MatrixXd Qd = q_to_eigen(Q);
    REQUIRE((Qd.transpose() * Qd - Eigen::MatrixXd::Identity(n, n))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
    REQUIRE((Qd * to_eigen(R) - to_eigen(A)).cwiseAbs().maxCoeff() < 1e-12);
    for (index_t i = 0; i < n; ++i) REQUIRE(R(i, i) > 0.0);
    REQUIRE(R.upper_bandwidth() <= A.lower_bandwidth() + A.upper_bandwidth());
}

TEST_CASE("banded_qr reconstruction at N = 200 and rank deficiency") {
    std::mt19937 rng(13);
    BandedMatrix A = random_spd_banded(200, 2, rng); // generic banded input
    auto [Q, R] = banded_qr(A);
    const Eigen::MatrixXd Qd = q_to_eigen(Q);
    REQUIRE((Qd * to_eigen(R) - to_eigen(A)).cwiseAbs().maxCoeff() <
            1e-12 * A.max_abs());
    REQUIRE((Qd.transpose() * Qd - Eigen::MatrixXd::Identity(200, 200))
                .cwiseAbs()
                .maxCoeff() < 1e-12);

    BandedMatrix Z(3, 3, 1, 1);
    Z.at(0, 0) = 1.0; // column 1 identically zero
    Z.at(2, 2) = 1.0;
    REQUIRE_THROWS_AS(banded_qr(Z), RankDeficient);
}

TEST_CASE("similarity_via_R basics") {
    std::mt19937 rng(17);
    const index_t n = 12;
    const BandedMatrix X = random_sym_tridiag(n, rng);

    SECTION("R = I returns X unchanged") {
        const BandedMatrix Y = similarity_via_R(X, BandedMatrix::identity(n));
        REQUIRE((to_eigen(Y) - to_eigen(X)).cwiseAbs().maxCoeff() < 1e-15);
    }

    SECTION("R = diag(2,1,...) matches dense triple product") {
        BandedMatrix R = BandedMatrix::identity(n);
        R.at(0, 0) = 2.0;
        const BandedMatrix Y = similarity_via_R(X, R);
        const Eigen::MatrixXd Rd = to_eigen(R);
        const Eigen::MatrixXd oracle = Rd * to_eigen(X) * Rd.inverse();
        for (index_t i = 0; i < n; ++i)
            for (index_t j = std::max<index_t>(0, i - 1);
                 j <= std::min(n - 1, i + 1); ++j)
                REQUIRE_THAT(Y(i, j),
                             Catch::Matchers::WithinAbs(oracle(i, j), 1e-12));
    }

    SECTION("Cholesky step of 2I - X gives a Jacobi matrix with spectrum in (0,1)") {
        const BandedMatrix X0 = shifted_legendre_x(40);
        const BandedMatrix R = banded_cholesky(shift_identity_minus(2.0, X0));
        const BandedMatrix Y = similarity_via_R(X0, R);
        // Discard the truncation-polluted trailing block before the check.
        const index_t m = 30;
        const Eigen::MatrixXd Yd = to_eigen(Y).topLeftCorner(m, m);
        REQUIRE((Yd - Yd.transpose()).cwiseAbs().maxCoeff() < 1e-10);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
            0.5 * (Yd + Yd.transpose()));
        REQUIRE(es.eigenvalues().minCoeff() > 0.0);
        REQUIRE(es.eigenvalues().maxCoeff() < 1.0);
    }

    SECTION("singular R is reported") {
        BandedMatrix R = BandedMatrix::identity(n);
        R.at(3, 3) = 0.0;
        REQUIRE_THROWS_AS(similarity_via_R(X, R), SingularR);
    }
}

TEST_CASE("similarity_via_Q matches dense oracle") {
    std::mt19937 rng(19);

    SECTION("identity reflectors leave X unchanged") {
        const BandedMatrix X = random_sym_tridiag(8, rng);
        auto [Q, R] = banded_qr(BandedMatrix::identity(8));
        const BandedMatrix Y = similarity_via_Q(X, Q);
        REQUIRE((to_eigen(Y) - to_eigen(X)).cwiseAbs().maxCoeff() < 1e-15);
    }

    SECTION("Q from QR of 2I - X, N = 8") {
        const BandedMatrix X = random_sym_tridiag(8, rng);
        auto [Q, R] = banded_qr(shift_identity_minus(2.0, X));
        const BandedMatrix Y = similarity_via_Q(X, Q);
        const Eigen::MatrixXd Qd = q_to_eigen(Q);
        const Eigen::MatrixXd oracle = Qd.transpose() * to_eigen(X) * Qd;
        for (index_t i = 0; i < 8; ++i)
            for (index_t j = std::max<index_t>(0, i - 1);
                 j <= std::min<index_t>(7, i + 1); ++j)
                REQUIRE_THAT(Y(i, j),
                             Catch::Matchers::WithinAbs(oracle(i, j), 1e-12));
    }

    SECTION("via_Q equals via_R on the same factored matrix, N = 500") {
        const index_t n = 500;
        const BandedMatrix X = shifted_legendre_x(n);
        const BandedMatrix A = shift_identity_minus(1.2, X);
        auto [Q, Rqr] = banded_qr(A);
        const BandedMatrix Yq = similarity_via_Q(X, Q);
        const BandedMatrix Yr = similarity_via_R(X, Rqr);
        double err = 0.0, scale = 0.0;
        const index_t m = n - 8; // ignore truncation boundary
        for (index_t i = 0; i < m; ++i)
            for (index_t j = std::max<index_t>(0, i - 1);
                 j <= std::min(m - 1, i + 1); ++j) {
                err = std::max(err, std::abs(Yq(i, j) - Yr(i, j)));
                scale = std::max(scale, std::abs(Yq(i, j)));
            }
        REQUIRE(err < 1e-10 * scale);
    }

    SECTION("dimension mismatch is reported") {
        const BandedMatrix X = random_sym_tridiag(6, rng);
        auto [Q, R] = banded_qr(BandedMatrix::identity(8));
        REQUIRE_THROWS_AS(similarity_via_Q(X, Q), DimensionMismatch);
    }
}

TEST_CASE("banded LU solves against dense oracle") {
    std::mt19937 rng(23);
    const index_t n = 60;
    BandedMatrix A(n, n, 2, 3);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (index_t j = 0; j < n; ++j)
        for (index_t i = std::max<index_t>(0, j - 3);
             i <= std::min(n - 1, j + 2); ++i)
            A.at(i, j) = unif(rng) + (i == j ? 8.0 : 0.0);
    std::vector<double> b(static_cast<std::size_t>(n));
    for (auto& v : b) v = unif(rng);

    BandedLU lu(A);
    const std::vector<double> x = lu.solve(b);
    const Eigen::VectorXd xe =
        to_eigen(A).partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(b.data(), n));
    for (index_t i = 0; i < n; ++i)
        REQUIRE_THAT(x[static_cast<std::size_t>(i)],
                     Catch::Matchers::WithinAbs(xe(i), 1e-11));
}

TEST_CASE("bordered_solve") {
    SECTION("identity core, no borders") {
        BorderedSystem S{BandedMatrix::identity(5), {}, {}};
        std::vector<double> rhs(5, 0.0);
        rhs[0] = 1.0;
        const std::vector<double> x = bordered_solve(S, rhs);
        REQUIRE(x[0] == 1.0);
        for (int i = 1; i < 5; ++i) REQUIRE(x[static_cast<std::size_t>(i)] == 0.0);
    }

    SECTION("1x1 core") {
        BandedMatrix core(1, 1, 0, 0);
        core.at(0, 0) = 2.0;
        BorderedSystem S{core, {}, {}};
        const std::vector<double> x = bordered_solve(S, std::vector<double>{4.0});
        REQUIRE_THAT(x[0], Catch::Matchers::WithinAbs(2.0, 1e-15));
    }

    SECTION("random 20x20 bordered vs dense LU oracle") {
        std::mt19937 rng(29);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        const index_t n = 20, r = 2, e = 1;
        BandedMatrix core(n - r, n, 1, 3);
        for (index_t i = 0; i < n - r; ++i)
            for (index_t j = std::max<index_t>(0, i - 1);
                 j <= std::min(n - 1, i + 3); ++j)
                core.at(i, j) = unif(rng) + (j == i + 1 ? 6.0 : 0.0);
        BorderedSystem S{core, {}, {}};
        for (index_t i = 0; i < r; ++i) {
            std::vector<double> row(static_cast<std::size_t>(n));
            for (auto& v : row) v = unif(rng);
            row[static_cast<std::size_t>(i)] += 4.0;
            S.top_rows.push_back(std::move(row));
        }
        for (index_t q = 0; q < e; ++q) {
            std::vector<double> col(static_cast<std::size_t>(n - r));
            for (auto& v : col) v = unif(rng);
            S.extra_cols.push_back(std::move(col));
        }
        std::vector<double> rhs(static_cast<std::size_t>(n));
        for (auto& v : rhs) v = unif(rng);

        const std::vector<double> x = bordered_solve(S, rhs);
        Eigen::MatrixXd A(n, n);
        for (index_t i = 0; i < n; ++i)
            for (index_t j = 0; j < n; ++j) A(i, j) = S.entry(i, j);
        const Eigen::VectorXd xe =
            A.partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), n));
        for (index_t i = 0; i < n; ++i)
            REQUIRE_THAT(x[static_cast<std::size_t>(i)],
                         Catch::Matchers::WithinAbs(xe(i), 1e-10));
    }

    SECTION("large bordered system exercises the banded path") {
        std::mt19937 rng(31);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        const index_t n = 150, r = 2, e = 1;
        BandedMatrix core(n - r, n, 2, 4);
        for (index_t i = 0; i < n - r; ++i)
            for (index_t j = std::max<index_t>(0, i - 2);
                 j <= std::min(n - 1, i + 4); ++j)
                core.at(i, j) = unif(rng) + (j == i + 2 ? 8.0 : 0.0);
        BorderedSystem S{core, {}, {}};
        for (index_t i = 0; i < r; ++i) {
            std::vector<double> row(static_cast<std::size_t>(n));
            for (auto& v : row) v = unif(rng);
            row[static_cast<std::size_t>(i)] += 4.0;
            S.top_rows.push_back(std::move(row));
        }
        std::vector<double> col(static_cast<std::size_t>(n - r), 0.0);
        col.back() = 1.0;
        S.extra_cols.push_back(std::move(col));

        std::vector<double> rhs(static_cast<std::size_t>(n));
        for (auto& v : rhs) v = unif(rng);
        const std::vector<double> x = bordered_solve(S, rhs);

        // Residual check against the assembled operator.
        double resid = 0.0, bmax = 0.0;
        for (index_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (index_t j = 0; j < n; ++j)
                s += S.entry(i, j) * x[static_cast<std::size_t>(j)];
            resid = std::max(resid, std::abs(s - rhs[static_cast<std::size_t>(i)]));
            bmax = std::max(bmax, std::abs(rhs[static_cast<std::size_t>(i)]));
        }
        REQUIRE(resid < 1e-10 * (1.0 + bmax));
    }

    SECTION("singular system is reported") {
        BandedMatrix core(2, 2, 0, 0);
        core.at(0, 0) = 1.0; // second diagonal entry zero
        BorderedSystem S{core, {}, {}};
        REQUIRE_THROWS_AS(bordered_solve(S, std::vector<double>{1.0, 1.0}),
                          SingularSystem);
    }
}

TEST_CASE("bandwidth bookkeeping is exact on factored output") {
    std::mt19937 rng(37);
    BandedMatrix A = random_spd_banded(80, 2, rng);
    const BandedMatrix R = banded_cholesky(A);
    // Any declared-zero entry must reconstruct as exactly zero.
    for (index_t i = 0; i < 80; ++i)
        for (index_t j = 0; j < 80; ++j)
            if (j - i > R.upper_bandwidth() || i > j)
                REQUIRE(std::abs(R(i, j)) <= 1e-13);
}
