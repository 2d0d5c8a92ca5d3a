#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "annular/banded.hpp"
#include "annular/errors.hpp"

namespace annular {

inline double beta_function(double x, double y) {
    return std::exp(std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y));
}

/// Recurrence coefficients of the orthonormal Jacobi family P^(a,b) on
/// [-1, 1] with weight (1-x)^a (1+x)^b: x p_n = b_{n-1} p_{n-1} + a_n p_n +
/// b_n p_{n+1}.
inline double jacobi_recurrence_alpha(index_t n, double a, double b) {
    if (n == 0) return (b - a) / (a + b + 2.0);
    const double q = 2.0 * n + a + b;
    return (b * b - a * a) / (q * (q + 2.0));
}

inline double jacobi_recurrence_beta(index_t n, double a, double b) {
    const double k = static_cast<double>(n + 1);
    if (n == 0)
        return 2.0 / (a + b + 2.0) * std::sqrt((a + 1.0) * (b + 1.0) / (a + b + 3.0));
    const double q = 2.0 * k + a + b;
    return 2.0 / q *
           std::sqrt(k * (k + a) * (k + b) * (k + a + b) /
                     ((q - 1.0) * (q + 1.0)));
}

/// Total mass of (1-x)^a (1+x)^b on [-1, 1].
inline double jacobi_mass(double a, double b) {
    return std::pow(2.0, a + b + 1.0) * beta_function(a + 1.0, b + 1.0);
}

enum class FamilyKind { JacobiOrthonormal, ChebyshevT, Ultraspherical2 };

/// A classical family on an interval [lo, hi]. Jacobi kinds are orthonormal
/// with respect to (hi-x)^a (x-lo)^b dx; Chebyshev-T and C^(2) keep their
/// textbook normalizations. p0 is the constant value of the first
/// polynomial.
struct ClassicalFamily {
    FamilyKind kind = FamilyKind::JacobiOrthonormal;
    double a = 0.0, b = 0.0;
    double lo = -1.0, hi = 1.0;

    static ClassicalFamily jacobi(double a, double b, double lo = -1.0,
                                  double hi = 1.0) {
        if (a <= -1.0 || b <= -1.0)
            throw InvalidParameter("jacobi family: need a, b > -1");
        return {FamilyKind::JacobiOrthonormal, a, b, lo, hi};
    }
    static ClassicalFamily chebyshev_t(double lo = -1.0, double hi = 1.0) {
        return {FamilyKind::ChebyshevT, 0.0, 0.0, lo, hi};
    }
    static ClassicalFamily ultraspherical2(double lo = -1.0, double hi = 1.0) {
        return {FamilyKind::Ultraspherical2, 0.0, 0.0, lo, hi};
    }

    double scale() const { return 0.5 * (hi - lo); }
    double shift() const { return 0.5 * (hi + lo); }

    /// Weight mass on [lo, hi].
    double mass() const {
        switch (kind) {
        case FamilyKind::JacobiOrthonormal:
            return std::pow(hi - lo, a + b + 1.0) * beta_function(a + 1.0, b + 1.0);
        case FamilyKind::ChebyshevT:
            return std::acos(-1.0); // invariant under the affine map
        case FamilyKind::Ultraspherical2:
            return scale() * 3.0 * std::acos(-1.0) / 8.0;
        }
        return 0.0;
    }

    double p0() const {
        return kind == FamilyKind::JacobiOrthonormal ? 1.0 / std::sqrt(mass())
                                                     : 1.0;
    }
};

/// Jacobi (multiplication-by-x) matrix truncation, quasimatrix convention:
/// x P(x) = P(x) X, so column n holds the expansion of x p_n.
inline BandedMatrix classical_jacobi_matrix(const ClassicalFamily& fam,
                                            index_t n) {
    BandedMatrix X(n, n, 1, 1);
    const double s = fam.scale(), c = fam.shift();
    switch (fam.kind) {
    case FamilyKind::JacobiOrthonormal:
        for (index_t i = 0; i < n; ++i) {
            X.at(i, i) = s * jacobi_recurrence_alpha(i, fam.a, fam.b) + c;
            if (i + 1 < n) {
                const double bb = s * jacobi_recurrence_beta(i, fam.a, fam.b);
                X.at(i, i + 1) = bb;
                X.at(i + 1, i) = bb;
            }
        }
        break;
    case FamilyKind::ChebyshevT:
        for (index_t i = 0; i < n; ++i) {
            X.at(i, i) = c;
            if (i + 1 < n) {
                X.at(i + 1, i) = (i == 0) ? s : 0.5 * s;
                X.at(i, i + 1) = 0.5 * s;
            }
        }
        break;
    case FamilyKind::Ultraspherical2:
        // x C_n = (n+1)/(2(n+2)) C_{n+1} + (n+3)/(2(n+2)) C_{n-1}
        for (index_t i = 0; i < n; ++i) {
            X.at(i, i) = c;
            if (i + 1 < n) {
                const double k = static_cast<double>(i);
                X.at(i + 1, i) = s * (k + 1.0) / (2.0 * (k + 2.0));
                X.at(i, i + 1) = s * (k + 4.0) / (2.0 * (k + 3.0));
            }
        }
        break;
    }
    return X;
}

/// Clenshaw evaluation of sum_n coeffs[n] p_n(x) from a (possibly
/// asymmetric) tridiagonal recurrence matrix and the constant p0.
inline double clenshaw_eval(const BandedMatrix& X, double p0,
                            std::span<const double> coeffs, double x) {
    const index_t n = static_cast<index_t>(coeffs.size());
    if (n == 0) return 0.0;
    if (X.rows() < n || X.cols() < n)
        throw DimensionMismatch("clenshaw_eval: recurrence matrix too small");
    double b1 = 0.0, b2 = 0.0; // b_{k+1}, b_{k+2}
    for (index_t k = n - 1; k >= 0; --k) {
        double bk = coeffs[static_cast<std::size_t>(k)];
        if (b1 != 0.0) bk += (x - X(k, k)) / X(k + 1, k) * b1;
        if (b2 != 0.0) bk -= X(k, k + 1) / X(k + 2, k + 1) * b2;
        b2 = b1;
        b1 = bk;
    }
    return b1 * p0;
}

inline double clenshaw_eval(const ClassicalFamily& fam,
                            std::span<const double> coeffs, double x) {
    const index_t n = static_cast<index_t>(coeffs.size());
    const BandedMatrix X = classical_jacobi_matrix(fam, n + 1);
    return clenshaw_eval(X, fam.p0(), coeffs, x);
}

/// Forward-recurrence evaluation of p_0..p_{n-1} and optionally their first
/// two derivatives at x. Used by finite-difference oracles and boundary rows.
inline void recurrence_eval(const BandedMatrix& X, double p0, index_t n,
                            double x, std::vector<double>* p,
                            std::vector<double>* dp = nullptr,
                            std::vector<double>* ddp = nullptr) {
    p->assign(static_cast<std::size_t>(n), 0.0);
    if (dp) dp->assign(static_cast<std::size_t>(n), 0.0);
    if (ddp) ddp->assign(static_cast<std::size_t>(n), 0.0);
    if (n == 0) return;
    (*p)[0] = p0;
    for (index_t k = 0; k + 1 < n; ++k) {
        const double beta = X(k + 1, k);
        const double gamma = (k > 0) ? X(k - 1, k) : 0.0;
        const double pk = (*p)[static_cast<std::size_t>(k)];
        const double pkm = (k > 0) ? (*p)[static_cast<std::size_t>(k - 1)] : 0.0;
        (*p)[static_cast<std::size_t>(k + 1)] =
            ((x - X(k, k)) * pk - gamma * pkm) / beta;
        if (dp) {
            const double dk = (*dp)[static_cast<std::size_t>(k)];
            const double dkm = (k > 0) ? (*dp)[static_cast<std::size_t>(k - 1)] : 0.0;
            (*dp)[static_cast<std::size_t>(k + 1)] =
                ((x - X(k, k)) * dk + pk - gamma * dkm) / beta;
        }
        if (ddp) {
            const double sk = (*ddp)[static_cast<std::size_t>(k)];
            const double skm = (k > 0) ? (*ddp)[static_cast<std::size_t>(k - 1)] : 0.0;
            const double dk = dp ? (*dp)[static_cast<std::size_t>(k)] : 0.0;
            (*ddp)[static_cast<std::size_t>(k + 1)] =
                ((x - X(k, k)) * sk + 2.0 * dk - gamma * skm) / beta;
        }
    }
}

// ---------------------------------------------------------------------------
// Gauss quadrature (Golub-Welsch with an in-module eigensolver)
// ---------------------------------------------------------------------------

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    template <class F> double integrate(F&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            s += weights[i] * f(nodes[i]);
        return s;
    }
};

/// Implicit-shift QL for a symmetric tridiagonal matrix, accumulating only
/// the first row of the eigenvector matrix (all that Golub-Welsch needs).
/// d holds the diagonal and is overwritten by eigenvalues; e holds the
/// off-diagonal in e[0..n-2]; z starts as e_0.
inline void symmetric_tridiagonal_eigen(std::vector<double>& d,
                                        std::vector<double>& e,
                                        std::vector<double>& z) {
    const index_t n = static_cast<index_t>(d.size());
    if (n <= 1) return;
    e.resize(static_cast<std::size_t>(n), 0.0);
    e[static_cast<std::size_t>(n - 1)] = 0.0;

    for (index_t l = 0; l < n; ++l) {
        index_t iter = 0;
        index_t m;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::abs(d[static_cast<std::size_t>(m)]) +
                                  std::abs(d[static_cast<std::size_t>(m + 1)]);
                if (std::abs(e[static_cast<std::size_t>(m)]) <= 1e-16 * dd) break;
            }
            if (m != l) {
                if (iter++ == 60)
                    throw Error("symmetric_tridiagonal_eigen: no convergence");
                double g = (d[static_cast<std::size_t>(l + 1)] -
                            d[static_cast<std::size_t>(l)]) /
                           (2.0 * e[static_cast<std::size_t>(l)]);
                double r = std::hypot(g, 1.0);
                g = d[static_cast<std::size_t>(m)] - d[static_cast<std::size_t>(l)] +
                    e[static_cast<std::size_t>(l)] /
                        (g + (g >= 0.0 ? std::abs(r) : -std::abs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                index_t i;
                for (i = m - 1; i >= l; --i) {
                    double f = s * e[static_cast<std::size_t>(i)];
                    const double bb = c * e[static_cast<std::size_t>(i)];
                    r = std::hypot(f, g);
                    e[static_cast<std::size_t>(i + 1)] = r;
                    if (r == 0.0) {
                        d[static_cast<std::size_t>(i + 1)] -= p;
                        e[static_cast<std::size_t>(m)] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[static_cast<std::size_t>(i + 1)] - p;
                    r = (d[static_cast<std::size_t>(i)] - g) * s + 2.0 * c * bb;
                    p = s * r;
                    d[static_cast<std::size_t>(i + 1)] = g + p;
                    g = c * r - bb;
                    f = z[static_cast<std::size_t>(i + 1)];
                    z[static_cast<std::size_t>(i + 1)] =
                        s * z[static_cast<std::size_t>(i)] + c * f;
                    z[static_cast<std::size_t>(i)] =
                        c * z[static_cast<std::size_t>(i)] - s * f;
                }
                if (r == 0.0 && i >= l) continue;
                d[static_cast<std::size_t>(l)] -= p;
                e[static_cast<std::size_t>(l)] = g;
                e[static_cast<std::size_t>(m)] = 0.0;
            }
        } while (m != l);
    }
}

/// n-point Gauss rule for the family's weight on its interval.
/// Nodes are the eigenvalues of the n x n (symmetrized) Jacobi matrix;
/// weights are mass times squared first eigenvector components.
inline QuadratureRule gauss_rule(const ClassicalFamily& fam, index_t n) {
    const BandedMatrix X = classical_jacobi_matrix(fam, n);
    std::vector<double> d(static_cast<std::size_t>(n)),
        e(static_cast<std::size_t>(n), 0.0), z(static_cast<std::size_t>(n), 0.0);
    for (index_t i = 0; i < n; ++i) {
        d[static_cast<std::size_t>(i)] = X(i, i);
        if (i + 1 < n)
            e[static_cast<std::size_t>(i)] =
                std::sqrt(X(i, i + 1) * X(i + 1, i));
    }
    z[0] = 1.0;
    symmetric_tridiagonal_eigen(d, e, z);

    std::vector<index_t> order(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](index_t a, index_t b) {
        return d[static_cast<std::size_t>(a)] < d[static_cast<std::size_t>(b)];
    });

    QuadratureRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    const double mass = fam.mass();
    for (index_t i = 0; i < n; ++i) {
        const index_t k = order[static_cast<std::size_t>(i)];
        rule.nodes[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(k)];
        const double zi = z[static_cast<std::size_t>(k)];
        rule.weights[static_cast<std::size_t>(i)] = mass * zi * zi;
    }
    return rule;
}

/// Gauss-Legendre rule on [lo, hi]; the workhorse testing oracle.
inline QuadratureRule gauss_legendre(index_t n, double lo = -1.0,
                                     double hi = 1.0) {
    return gauss_rule(ClassicalFamily::jacobi(0.0, 0.0, lo, hi), n);
}

// ---------------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------------

/// Upper-banded R with C^(2)(x) R = T(x): the classical two-step
/// ultraspherical conversion, nonzeros on diagonals 0, +2, +4.
inline BandedMatrix conversion_T_to_C2(index_t n) {
    BandedMatrix R(n, n, 0, 4);
    for (index_t c = 0; c < n; ++c) {
        const double k = static_cast<double>(c);
        if (c == 0) {
            R.at(0, 0) = 1.0;
        } else if (c == 1) {
            R.at(1, 1) = 0.25;
        } else {
            R.at(c, c) = 0.5 / (k + 1.0);
            R.at(c - 2, c) = -0.5 * (1.0 / (k + 1.0) + 1.0 / (k - 1.0));
            if (c >= 4) R.at(c - 4, c) = 0.5 / (k - 1.0);
        }
    }
    return R;
}

/// The family orthonormal on [0, 1] with respect to the Chebyshev measure
/// times x^a (1-x)^b, i.e. weight x^(a-1/2) (1-x)^(b-1/2).
struct ChebyshevWeightedFamily {
    BandedMatrix X;
    double p0 = 0.0;
};

namespace detail {
/// Symmetric Jacobi matrix of the normalized Chebyshev-T family on [0, 1]
/// (variable x, weight (x(1-x))^(-1/2)).
inline BandedMatrix normalized_chebyshev01_x(index_t n) {
    BandedMatrix X(n, n, 1, 1);
    for (index_t i = 0; i < n; ++i) {
        X.at(i, i) = 0.5;
        if (i + 1 < n) {
            const double b = (i == 0) ? 0.25 * std::sqrt(2.0) : 0.25;
            X.at(i, i + 1) = b;
            X.at(i + 1, i) = b;
        }
    }
    return X;
}
} // namespace detail

/// Banded conversion from the Chebyshev-measure ladder: returns
/// upper-triangular R_T with F^(a,b)(x) R_T = T(1-2x), where F^(a,b) is the
/// family of ChebyshevWeightedFamily. Integer a, b only; bandwidth a + b.
/// Computed from the Cholesky factorization of X^a (I - X)^b at the
/// normalized-Chebyshev Jacobi matrix.
inline BandedMatrix conversion_T_to_jacobi(index_t a, index_t b, index_t n) {
    if (a < 0 || b < 0)
        throw InvalidParameter("conversion_T_to_jacobi: need integer a, b >= 0");
    const index_t margin = 2 * (a + b) + 4;
    const index_t m = n + margin;
    const BandedMatrix X = detail::normalized_chebyshev01_x(m);

    BandedMatrix W = BandedMatrix::identity(m);
    for (index_t k = 0; k < a; ++k) W = W * X;
    for (index_t k = 0; k < b; ++k) W = W * shift_identity_minus(1.0, X);

    BandedMatrix R = (a + b > 0) ? banded_cholesky(W) : BandedMatrix::identity(m);

    const double pi = std::acos(-1.0);
    BandedMatrix RT(n, n, 0, a + b);
    for (index_t j = 0; j < n; ++j) {
        // T_j(1-2x) = (-1)^j sqrt(h_j) p_j(x) for the positive-leading
        // normalized family generated by the recurrence.
        const double s = (j % 2 == 0 ? 1.0 : -1.0) * std::sqrt(j == 0 ? pi : 0.5 * pi);
        for (index_t i = std::max<index_t>(0, j - (a + b)); i <= j; ++i)
            RT.at(i, j) = R(i, j) * s;
    }
    return RT;
}

/// The F^(a,b) family matching conversion_T_to_jacobi, for sampling tests.
inline ChebyshevWeightedFamily chebyshev_weighted_family(index_t a, index_t b,
                                                         index_t n) {
    if (a < 0 || b < 0)
        throw InvalidParameter("chebyshev_weighted_family: need a, b >= 0");
    const index_t margin = 2 * (a + b) + 8;
    const index_t m = n + margin;
    BandedMatrix X = detail::normalized_chebyshev01_x(m);
    // Raise one unit of weight at a time to stay well conditioned.
    for (index_t k = 0; k < a; ++k) {
        const BandedMatrix R = banded_cholesky(X);
        X = similarity_via_R(X, R);
    }
    for (index_t k = 0; k < b; ++k) {
        const BandedMatrix R = banded_cholesky(shift_identity_minus(1.0, X));
        X = similarity_via_R(X, R);
    }
    const double p0 =
        1.0 / std::sqrt(beta_function(a + 0.5, b + 0.5));
    return {X.truncated(n, n), p0};
}

} // namespace annular
