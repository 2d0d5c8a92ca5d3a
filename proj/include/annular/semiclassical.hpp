#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <mutex>
#include <span>
#include <vector>

#include "annular/banded.hpp"
#include "annular/classical.hpp"
#include "annular/errors.hpp"

namespace annular {

/// Route used to push the Jacobi matrix up the c-hierarchy.
enum class Strategy { CholeskyR, QR_Q, QR_R };

enum class WeightPower { none, half_c };

struct WeightSubset {
    bool a = false, b = false, c = false;
    int count() const { return (a ? 1 : 0) + (b ? 1 : 0) + (c ? 1 : 0); }
};

/// Total mass of x^a (1-x)^b (t-x)^c on [0, 1], via a Gauss-Jacobi rule in
/// the (a, b) part with the polynomial (t-x)^c integrand. Exact for c in N.
inline double semiclassical_mass(double t, double a, double b, index_t c) {
    const QuadratureRule rule =
        gauss_rule(ClassicalFamily::jacobi(b, a, 0.0, 1.0), c / 2 + 2);
    return rule.integrate([&](double x) { return std::pow(t - x, static_cast<double>(c)); });
}

/// One member of the semiclassical hierarchy Q^{t,(a,b,c)} on (0, 1):
/// the truncated Jacobi matrix plus the constant Q_0 = 1/sqrt(mass).
struct SemiclassicalFamily {
    double t = 2.0;
    double a = 0.0, b = 0.0;
    index_t c = 0;
    BandedMatrix X;
    double norm0 = 1.0;

    double eval(std::span<const double> coeffs, double x) const {
        return clenshaw_eval(X, norm0, coeffs, x);
    }

    /// Values (and optional derivatives) of Q_0..Q_{count-1} at x.
    void values(index_t count, double x, std::vector<double>* q,
                std::vector<double>* dq = nullptr,
                std::vector<double>* ddq = nullptr) const {
        recurrence_eval(X, norm0, count, x, q, dq, ddq);
    }
};

namespace detail {

/// Jacobi matrix of Q^{t,(a,b,c)} truncated to n x n exactly; the
/// factorizations run at n plus a growth margin so every returned entry
/// agrees with the infinite-dimensional computation.
inline BandedMatrix semiclassical_x(double t, double a, double b, index_t c,
                                    index_t n, Strategy strat) {
    if (!(t > 1.0)) throw InvalidParameter("semiclassical: need t > 1");
    if (a <= -1.0 || b <= -1.0)
        throw InvalidParameter("semiclassical: need a, b > -1");
    if (c < 0) throw InvalidParameter("semiclassical: need c >= 0");

    const index_t m = n + 2 * c + 4;
    BandedMatrix X =
        classical_jacobi_matrix(ClassicalFamily::jacobi(b, a, 0.0, 1.0), m);
    index_t k = 0;
    if (strat != Strategy::CholeskyR) {
        while (k + 2 <= c) {
            const BandedQR f = banded_qr(shift_identity_minus(t, X));
            X = (strat == Strategy::QR_Q) ? similarity_via_Q(X, f.Q)
                                          : similarity_via_R(X, f.R);
            k += 2;
        }
    }
    while (k < c) {
        const BandedMatrix R = banded_cholesky(shift_identity_minus(t, X));
        X = similarity_via_R(X, R);
        k += 1;
    }
    return X.truncated(n, n);
}

} // namespace detail

/// Build a family from scratch with the requested raising strategy.
/// CholeskyR raises c in unit steps; the QR routes go in steps of two with
/// one trailing Cholesky step when c is odd.
inline SemiclassicalFamily semiclassical_jacobi(double t, double a, double b,
                                                index_t c, index_t n,
                                                Strategy strat = Strategy::QR_Q) {
    return {t, a, b, c, detail::semiclassical_x(t, a, b, c, n, strat),
            1.0 / std::sqrt(semiclassical_mass(t, a, b, c))};
}

// ---------------------------------------------------------------------------
// Hierarchy cache
// ---------------------------------------------------------------------------

/// Memoizes families and the step factorizations linking consecutive c
/// values. Keys are bit-exact in (t, a, b). Reads and inserts are guarded
/// by one mutex (single-writer contract); entries are returned by value.
class HierarchyCache {
public:
    SemiclassicalFamily family(double t, double a, double b, index_t c,
                               index_t n) {
        std::lock_guard<std::mutex> lock(mu_);
        return family_locked(t, a, b, c, n);
    }

    /// Cholesky factor R of tI - X_{t,(a,b,c)}, exact n x n:
    /// Q^{t,(a,b,c)} = Q^{t,(a,b,c+1)} R.
    BandedMatrix cholesky_step(double t, double a, double b, index_t c,
                               index_t n) {
        std::lock_guard<std::mutex> lock(mu_);
        return cholesky_step_locked(t, a, b, c, n);
    }

    /// Positive-phase QR of tI - X_{t,(a,b,c)} at size >= n:
    /// Q^{t,(a,b,c)} = Q^{t,(a,b,c+2)} R and (t-x) Q^{t,(a,b,c+2)} =
    /// Q^{t,(a,b,c)} Q.
    BandedQR qr_step(double t, double a, double b, index_t c, index_t n) {
        std::lock_guard<std::mutex> lock(mu_);
        const Key key =
            make_key(t, a, b, c);
        auto it = qrs_.find(key);
        if (it == qrs_.end() ||
            it->second.R.rows() < n) {
            const SemiclassicalFamily fam = family_locked(t, a, b, c, n);
            BandedQR f = banded_qr(shift_identity_minus(t, fam.X.truncated(n, n)));
            it = qrs_.insert_or_assign(it == qrs_.end() ? qrs_.begin() : it,
                                       key, std::move(f));
        }
        return it->second;
    }

private:
    using Key = std::tuple<std::uint64_t, std::uint64_t, std::uint64_t, index_t>;

    static std::uint64_t bits(double x) {
        std::uint64_t u;
        std::memcpy(&u, &x, sizeof u);
        return u;
    }
    static Key make_key(double t, double a, double b, index_t c) {
        return {bits(t), bits(a), bits(b), c};
    }

    SemiclassicalFamily family_locked(double t, double a, double b, index_t c,
                                      index_t n) {
        const Key key = make_key(t, a, b, c);
        auto it = families_.find(key);
        if (it == families_.end() || it->second.X.rows() < n) {
            SemiclassicalFamily fam;
            if (c == 0) {
                fam = {t, a, b, 0,
                       classical_jacobi_matrix(
                           ClassicalFamily::jacobi(b, a, 0.0, 1.0), n),
                       1.0 / std::sqrt(semiclassical_mass(t, a, b, 0))};
            } else {
                // One QR double-step from c-2 when possible, else a single
                // Cholesky step from c-1; each parent is cached in turn.
                const index_t m = n + 6;
                if (c >= 2) {
                    const SemiclassicalFamily base = family_locked(t, a, b, c - 2, m);
                    const BandedQR f =
                        banded_qr(shift_identity_minus(t, base.X));
                    fam = {t, a, b, c, similarity_via_Q(base.X, f.Q).truncated(n, n),
                           1.0 / std::sqrt(semiclassical_mass(t, a, b, c))};
                } else {
                    const SemiclassicalFamily base = family_locked(t, a, b, c - 1, m);
                    const BandedMatrix R =
                        banded_cholesky(shift_identity_minus(t, base.X));
                    fam = {t, a, b, c, similarity_via_R(base.X, R).truncated(n, n),
                           1.0 / std::sqrt(semiclassical_mass(t, a, b, c))};
                }
            }
            it = families_.insert_or_assign(it == families_.end()
                                                ? families_.begin()
                                                : it,
                                            key, std::move(fam));
        }
        SemiclassicalFamily out = it->second;
        out.X = out.X.truncated(n, n);
        return out;
    }

    BandedMatrix cholesky_step_locked(double t, double a, double b, index_t c,
                                      index_t n) {
        const Key key = make_key(t, a, b, c);
        auto it = chols_.find(key);
        if (it == chols_.end() || it->second.rows() < n) {
            const SemiclassicalFamily fam = family_locked(t, a, b, c, n);
            BandedMatrix R = banded_cholesky(shift_identity_minus(t, fam.X));
            it = chols_.insert_or_assign(it == chols_.end() ? chols_.begin() : it,
                                         key, std::move(R));
        }
        return it->second.truncated(n, n);
    }

    std::mutex mu_;
    std::map<Key, SemiclassicalFamily> families_;
    std::map<Key, BandedMatrix> chols_;
    std::map<Key, BandedQR> qrs_;
};

// ---------------------------------------------------------------------------
// Connection matrices
// ---------------------------------------------------------------------------

/// Upper-triangular R with Q^{t,(a,b,c)} = Q^{t,(a,b,c+dc)} R, chained in
/// unit Cholesky steps; upper bandwidth dc.
inline BandedMatrix raise_c_connection(HierarchyCache& cache, double t,
                                       double a, double b, index_t c,
                                       index_t dc, index_t n) {
    if (dc < 1) throw InvalidParameter("raise_c_connection: need dc >= 1");
    const index_t m = n + 2 * dc + 4;
    BandedMatrix total = cache.cholesky_step(t, a, b, c, m);
    for (index_t k = 1; k < dc; ++k)
        total = cache.cholesky_step(t, a, b, c + k, m) * total;
    return total.truncated(n, n);
}

/// Upper-triangular connection for a general raise (da, db, dc):
/// Q^{t,(a,b,c)} = Q^{t,(a+da,b+db,c+dc)} R, by one-shot Cholesky of
/// X^da (I-X)^db (tI-X)^dc, splitting into unit steps if that matrix is
/// numerically indefinite. Upper bandwidth da + db + dc.
inline BandedMatrix general_raise_connection(HierarchyCache& cache, double t,
                                             double a, double b, index_t c,
                                             index_t da, index_t db, index_t dc,
                                             index_t n) {
    if (da < 0 || db < 0 || dc < 0 || da + db + dc < 1)
        throw InvalidParameter("general_raise_connection: need da+db+dc >= 1");
    const index_t m = n + 2 * (da + db + dc) + 6;
    const SemiclassicalFamily fam = cache.family(t, a, b, c, m);

    try {
        BandedMatrix W = BandedMatrix::identity(m);
        for (index_t k = 0; k < da; ++k) W = W * fam.X;
        for (index_t k = 0; k < db; ++k)
            W = W * shift_identity_minus(1.0, fam.X);
        for (index_t k = 0; k < dc; ++k)
            W = W * shift_identity_minus(t, fam.X);
        return banded_cholesky(W).truncated(n, n);
    } catch (const NotPositiveDefinite&) {
        // Unit steps: raise a, then b, then c, accumulating the factors.
        BandedMatrix X = fam.X;
        BandedMatrix total = BandedMatrix::identity(m);
        auto step = [&](const BandedMatrix& W) {
            const BandedMatrix R = banded_cholesky(W);
            X = similarity_via_R(X, R);
            total = R * total;
        };
        for (index_t k = 0; k < da; ++k) step(X);
        for (index_t k = 0; k < db; ++k) step(shift_identity_minus(1.0, X));
        for (index_t k = 0; k < dc; ++k) step(shift_identity_minus(t, X));
        return total.truncated(n, n);
    }
}

/// Lower-triangular weighted lowering, the transpose of the matching raise:
/// w_S(x) Q^{t,(a+da,b+db,c+dc)} = Q^{t,(a,b,c)} R^T with unit increments on
/// the selected weights.
inline BandedMatrix weighted_lowering(HierarchyCache& cache, double t, double a,
                                      double b, index_t c,
                                      const WeightSubset& which, index_t n) {
    if (which.count() == 0)
        throw InvalidParameter("weighted_lowering: empty weight subset");
    return general_raise_connection(cache, t, a, b, c, which.a ? 1 : 0,
                                    which.b ? 1 : 0, which.c ? 1 : 0, n)
        .transpose();
}

// ---------------------------------------------------------------------------
// Differentiation matrices
// ---------------------------------------------------------------------------

/// D with d/dx Q^{t,(a,b,c)} = Q^{t,(a+1,b+1,c+1)} D; nonzeros only on the
/// first two superdiagonals. Built from the c = 0 classical derivative and
/// the banded-factor recursion, with the inverse factor applied implicitly
/// to just the two known bands per column.
inline BandedMatrix diff_up(HierarchyCache& cache, double t, double a, double b,
                            index_t c, index_t n) {
    const index_t m = n + 2 * c + 10;

    // d/dx Q^{t,(a,b,0)}_k = sqrt(k (k+a+b+1)) Q^{t,(a+1,b+1,0)}_{k-1}.
    BandedMatrix D(m, m, 0, 2);
    for (index_t j = 1; j < m; ++j) {
        const double k = static_cast<double>(j);
        D.at(j - 1, j) = std::sqrt(k * (k + a + b + 1.0));
    }
    D = cache.cholesky_step(t, a + 1.0, b + 1.0, 0, m) * D;
    D = D.trimmed(0.0); // bands {+1, +2}

    for (index_t k = 0; k < c; ++k) {
        const BandedMatrix R1 = cache.cholesky_step(t, a, b, k, m);
        const BandedMatrix R2 = cache.cholesky_step(t, a + 1.0, b + 1.0, k + 1, m);
        const BandedMatrix M = R2 * D;
        BandedMatrix Dn(m, m, 0, 2);
        for (index_t j = 1; j < m; ++j) {
            const double rjj = R1(j, j);
            Dn.at(j - 1, j) = M(j - 1, j) / rjj;
            if (j >= 2)
                Dn.at(j - 2, j) =
                    (M(j - 2, j) - Dn(j - 2, j - 1) * R1(j - 1, j)) / rjj;
        }
        D = std::move(Dn);
    }
    return D.truncated(n, n);
}

namespace detail {

/// D_ab with d/dx [x^alpha (1-x)^beta Q^{t,(alpha,beta,gamma)}] =
/// x^(alpha-1) (1-x)^(beta-1) Q^{t,(alpha-1,beta-1,gamma+1)} D_ab;
/// nonzeros on the diagonal and first subdiagonal.
inline BandedMatrix diff_ab_weighted(HierarchyCache& cache, double t,
                                     double alpha, double beta, index_t gamma,
                                     index_t n) {
    if (alpha <= 0.0 || beta <= 0.0)
        throw InvalidParameter("diff_ab_weighted: target parameter <= -1");
    const index_t m = n + 2 * gamma + 10;

    // Classical base: d/dx [x^a (1-x)^b Q^{t,(a,b,0)}_k] =
    // -sqrt((k+1)(k+a+b)) x^(a-1) (1-x)^(b-1) Q^{t,(a-1,b-1,0)}_{k+1}.
    BandedMatrix D(m, m, 1, 0);
    for (index_t j = 0; j + 1 < m; ++j) {
        const double k = static_cast<double>(j);
        D.at(j + 1, j) = -std::sqrt((k + 1.0) * (k + alpha + beta));
    }
    D = cache.cholesky_step(t, alpha - 1.0, beta - 1.0, 0, m) * D;
    D = D.trimmed(0.0); // bands {0, -1}

    for (index_t k = 0; k < gamma; ++k) {
        const BandedMatrix R = cache.cholesky_step(t, alpha, beta, k, m);
        const BandedMatrix R5 =
            cache.cholesky_step(t, alpha - 1.0, beta - 1.0, k + 1, m);
        const BandedMatrix M = R5 * D;
        BandedMatrix Dn(m, m, 1, 0);
        for (index_t j = 0; j < m; ++j) {
            const double rjj = R(j, j);
            const double rup = (j >= 1) ? R(j - 1, j) : 0.0;
            Dn.at(j, j) = (M(j, j) - (j >= 1 ? Dn(j, j - 1) * rup : 0.0)) / rjj;
            if (j + 1 < m) Dn.at(j + 1, j) = M(j + 1, j) / rjj;
        }
        D = std::move(Dn);
    }
    return D.truncated(n, n);
}

} // namespace detail

/// Negated transpose of a banded matrix.
inline BandedMatrix negated_transpose(const BandedMatrix& A) {
    BandedMatrix T = A.transpose();
    return -1.0 * T;
}

/// Two-band quadrature projection of a weighted differentiation matrix;
/// exact for integer parameters. Serves as the generic fallback for weight
/// subsets without a dedicated recursion, and as an independent check of
/// the banded constructions.
inline BandedMatrix diff_weighted_projection(HierarchyCache& cache, double t,
                                             double a, double b, index_t c,
                                             const WeightSubset& which,
                                             index_t n) {
    const double a2 = a + (which.a ? -1.0 : 1.0);
    const double b2 = b + (which.b ? -1.0 : 1.0);
    const index_t c2 = c + (which.c ? -1 : 1);
    if (a2 <= -1.0 || b2 <= -1.0 || c2 < 0)
        throw InvalidParameter("diff_weighted_projection: target out of range");

    const int s = which.count();
    const index_t lower = std::max<index_t>(s - 1, 0);
    const index_t upper = std::max<index_t>(2 - s, 0);

    const SemiclassicalFamily src = cache.family(t, a, b, c, n + 3);
    const SemiclassicalFamily tgt = cache.family(t, a2, b2, c2, n + 3);

    const index_t nq =
        n + static_cast<index_t>(std::ceil(a + b)) + c + c2 + 8;
    const QuadratureRule gl = gauss_legendre(nq, 0.0, 1.0);

    BandedMatrix D(n, n, lower, upper);
    std::vector<double> qs, dqs, qt;
    for (std::size_t qi = 0; qi < gl.nodes.size(); ++qi) {
        const double x = gl.nodes[qi];
        src.values(n + 1, x, &qs, &dqs);
        tgt.values(n + 1, x, &qt, nullptr);
        double ws = 1.0, dlog = 0.0;
        if (which.a) {
            ws *= std::pow(x, a);
            dlog += a / x;
        }
        if (which.b) {
            ws *= std::pow(1.0 - x, b);
            dlog -= b / (1.0 - x);
        }
        if (which.c) {
            ws *= std::pow(t - x, static_cast<double>(c));
            dlog -= static_cast<double>(c) / (t - x);
        }
        const double wtgt = std::pow(x, a2) * std::pow(1.0 - x, b2) *
                            std::pow(t - x, static_cast<double>(c2));
        const double wq = gl.weights[qi] * wtgt;
        for (index_t col = 0; col < n; ++col) {
            const double integrand =
                ws * (dlog * qs[static_cast<std::size_t>(col)] +
                      dqs[static_cast<std::size_t>(col)]);
            for (index_t row = std::max<index_t>(0, col - upper);
                 row <= std::min(n - 1, col + lower); ++row)
                D.at(row, col) += wq * integrand * qt[static_cast<std::size_t>(row)];
        }
    }
    return D;
}

/// Weighted differentiation d/dx [w_S(x) Q^{t,(a,b,c)}] expressed in the
/// family with the selected parameters lowered and the others raised.
/// The full weight uses the integration-by-parts transpose identity; the
/// {a,b} and {c} cases use the banded recursion; remaining subsets fall
/// back to the quadrature projection.
inline BandedMatrix diff_weighted(HierarchyCache& cache, double t, double a,
                                  double b, index_t c, const WeightSubset& which,
                                  index_t n) {
    if (which.a && which.b && which.c) {
        if (a <= 0.0 || b <= 0.0 || c < 1)
            throw InvalidParameter("diff_weighted: target parameter <= -1");
        return negated_transpose(diff_up(cache, t, a - 1.0, b - 1.0, c - 1, n));
    }
    if (which.a && which.b && !which.c)
        return detail::diff_ab_weighted(cache, t, a, b, c, n);
    if (!which.a && !which.b && which.c) {
        if (c < 1) throw InvalidParameter("diff_weighted: c weight needs c >= 1");
        return negated_transpose(
            detail::diff_ab_weighted(cache, t, a + 1.0, b + 1.0, c - 1, n));
    }
    if (which.count() == 0)
        throw InvalidParameter("diff_weighted: empty weight subset");
    return diff_weighted_projection(cache, t, a, b, c, which, n);
}

// ---------------------------------------------------------------------------
// Conversion to Chebyshev coefficients
// ---------------------------------------------------------------------------

/// Solve R x = v for upper-triangular banded R (back substitution).
inline std::vector<double> triangular_solve_upper(const BandedMatrix& R,
                                                  std::span<const double> v) {
    const index_t n = R.rows();
    if (static_cast<index_t>(v.size()) != n)
        throw DimensionMismatch("triangular_solve_upper: length mismatch");
    std::vector<double> x(v.begin(), v.end());
    const index_t bw = R.upper_bandwidth();
    for (index_t i = n - 1; i >= 0; --i) {
        double s = x[static_cast<std::size_t>(i)];
        for (index_t j = i + 1; j <= std::min(n - 1, i + bw); ++j)
            s -= R(i, j) * x[static_cast<std::size_t>(j)];
        const double d = R(i, i);
        if (d == 0.0)
            throw SingularR("triangular_solve_upper: zero diagonal");
        x[static_cast<std::size_t>(i)] = s / d;
    }
    return x;
}

/// Apply the c-lowering factor chain to a coefficient vector: orthogonal
/// Q factors for the square-root weighted expansion, triangular solves for
/// the plain one; odd c finishes with one Cholesky step. Each factor costs
/// O(N). The returned coefficients live in Q^{t,(a,b,0)} (times
/// sqrt(t - x) when c is odd and the weighted route was taken).
inline std::vector<double> apply_weight_reduction_chain(
    HierarchyCache& cache, double t, double a, double b, index_t c,
    WeightPower power, std::span<const double> f) {
    const index_t m = static_cast<index_t>(f.size()) + c + 8;
    std::vector<double> v(f.begin(), f.end());
    v.resize(static_cast<std::size_t>(m), 0.0);
    const index_t gmin = (c % 2 == 0) ? 0 : 1;
    for (index_t g = c - 2; g >= gmin; g -= 2) {
        const BandedQR step = cache.qr_step(t, a, b, g, m);
        if (power == WeightPower::half_c)
            step.Q.apply(v);
        else
            v = triangular_solve_upper(step.R.truncated(m, m), v);
    }
    if (c % 2 == 1)
        v = triangular_solve_upper(cache.cholesky_step(t, a, b, 0, m), v);
    return v;
}

/// Inverse of apply_weight_reduction_chain.
inline std::vector<double> apply_weight_raising_chain(HierarchyCache& cache,
                                                      double t, double a,
                                                      double b, index_t c,
                                                      WeightPower power,
                                                      std::span<const double> v) {
    const index_t m = static_cast<index_t>(v.size());
    std::vector<double> f(v.begin(), v.end());
    if (c % 2 == 1)
        f = cache.cholesky_step(t, a, b, 0, m).apply(f);
    const index_t gmin = (c % 2 == 0) ? 0 : 1;
    for (index_t g = gmin; g <= c - 2; g += 2) {
        const BandedQR step = cache.qr_step(t, a, b, g, m);
        if (power == WeightPower::half_c)
            step.Q.apply_transpose(f);
        else
            f = step.R.truncated(m, m).apply(f);
    }
    return f;
}

/// Chebyshev-T coefficients (argument 1 - 2x) of a Q^{t,(a,b,0)} expansion,
/// by running the three-term recurrence in T-coefficient space. Exact in
/// exact arithmetic; O(N^2) — the direct per-column conversion.
inline std::vector<double> semiclassical_base_to_chebyshev(
    double a, double b, std::span<const double> v) {
    const index_t n = static_cast<index_t>(v.size());
    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    if (n == 0) return acc;
    const BandedMatrix Xq =
        classical_jacobi_matrix(ClassicalFamily::jacobi(b, a, 0.0, 1.0), n);

    // Multiplication by x = (1 - u)/2 acting on T(u) coefficients.
    auto mult_x = [&](const std::vector<double>& cvec) {
        std::vector<double> y(cvec.size(), 0.0);
        const index_t len = static_cast<index_t>(cvec.size());
        for (index_t i = 0; i < len; ++i) {
            double xt = 0.0; // (X_T c)_i
            if (i == 1 && len > 0) xt += cvec[0];
            if (i >= 2) xt += 0.5 * cvec[static_cast<std::size_t>(i - 1)];
            if (i + 1 < len) xt += 0.5 * cvec[static_cast<std::size_t>(i + 1)];
            y[static_cast<std::size_t>(i)] =
                0.5 * (cvec[static_cast<std::size_t>(i)] - xt);
        }
        return y;
    };

    const double q0 = 1.0 / std::sqrt(beta_function(a + 1.0, b + 1.0));
    std::vector<double> qprev(static_cast<std::size_t>(n), 0.0), qcur;
    qprev[0] = q0;
    for (index_t i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] += v[0] * qprev[static_cast<std::size_t>(i)];
    if (n == 1) return acc;

    // q_{k+1} = (x q_k - alpha_k q_k - beta_{k-1} q_{k-1}) / beta_k.
    for (index_t k = 0; k + 1 < n; ++k) {
        const double alpha = Xq(k, k);
        const double beta = Xq(k + 1, k);
        const double betam = (k > 0) ? Xq(k - 1, k) : 0.0;
        std::vector<double> qnext = mult_x(k == 0 ? qprev : qcur);
        const std::vector<double>& qk = (k == 0) ? qprev : qcur;
        for (index_t i = 0; i < n; ++i) {
            double s = qnext[static_cast<std::size_t>(i)] -
                       alpha * qk[static_cast<std::size_t>(i)];
            if (k > 0) s -= betam * qprev[static_cast<std::size_t>(i)];
            qnext[static_cast<std::size_t>(i)] = s / beta;
        }
        if (k > 0) qprev = std::move(qcur);
        qcur = std::move(qnext);
        const double vk = v[static_cast<std::size_t>(k + 1)];
        for (index_t i = 0; i < n; ++i)
            acc[static_cast<std::size_t>(i)] += vk * qcur[static_cast<std::size_t>(i)];
    }
    return acc;
}

/// Inverse of semiclassical_base_to_chebyshev (upper-triangular
/// back substitution on the generated columns).
inline std::vector<double> chebyshev_to_semiclassical_base(
    double a, double b, std::span<const double> cheb) {
    const index_t n = static_cast<index_t>(cheb.size());
    std::vector<double> g(static_cast<std::size_t>(n), 0.0);
    if (n == 0) return g;

    // Columns: T-coefficients of each Q_k.
    std::vector<std::vector<double>> cols(static_cast<std::size_t>(n));
    for (index_t k = 0; k < n; ++k) {
        std::vector<double> e(static_cast<std::size_t>(k + 1), 0.0);
        e[static_cast<std::size_t>(k)] = 1.0;
        cols[static_cast<std::size_t>(k)] = semiclassical_base_to_chebyshev(a, b, e);
    }
    std::vector<double> f(cheb.begin(), cheb.end());
    for (index_t k = n - 1; k >= 0; --k) {
        const auto& col = cols[static_cast<std::size_t>(k)];
        const double gk = f[static_cast<std::size_t>(k)] / col[static_cast<std::size_t>(k)];
        g[static_cast<std::size_t>(k)] = gk;
        for (index_t i = 0; i <= k; ++i)
            f[static_cast<std::size_t>(i)] -= gk * col[static_cast<std::size_t>(i)];
    }
    return g;
}

/// A Chebyshev-T expansion in the argument 1 - 2x, optionally carrying a
/// residual sqrt(t - x) weight factor from an odd-c reduction.
struct ChebyshevExpansion {
    std::vector<double> coeffs;
    bool sqrt_weight = false;
    double t = 2.0;

    double eval(double x) const {
        const double v = clenshaw_eval(ClassicalFamily::chebyshev_t(), coeffs,
                                       1.0 - 2.0 * x);
        return sqrt_weight ? v * std::sqrt(t - x) : v;
    }
};

/// Chebyshev coefficients of a (possibly square-root-weighted) expansion:
/// evaluation of the result reproduces (t-x)^(c/2) Q^{t,(a,b,c)} f (half_c)
/// or Q^{t,(a,b,c)} f (none).
inline ChebyshevExpansion to_chebyshev_coeffs(HierarchyCache& cache, double t,
                                              double a, double b, index_t c,
                                              WeightPower power,
                                              std::span<const double> f) {
    if (a < 0.0 || b < 0.0 || a != std::floor(a) || b != std::floor(b))
        throw InvalidParameter("to_chebyshev_coeffs: integer a, b >= 0 only");
    const std::vector<double> base =
        apply_weight_reduction_chain(cache, t, a, b, c, power, f);
    ChebyshevExpansion out;
    out.coeffs = semiclassical_base_to_chebyshev(a, b, base);
    out.sqrt_weight = (power == WeightPower::half_c) && (c % 2 == 1);
    out.t = t;
    return out;
}

} // namespace annular
