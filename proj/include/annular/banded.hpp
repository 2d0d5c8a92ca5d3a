#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "annular/errors.hpp"

namespace annular {

using index_t = std::ptrdiff_t;

/// Rectangular matrix stored by diagonals.
///
/// Entry (i, j) is admissible when -lower <= j - i <= upper and lives at
/// data[j * (lower + upper + 1) + (i - j + upper)] (column-major bands,
/// LAPACK-style). Reads outside the band return exactly 0; writes outside
/// the band are an error. This is the operator currency of the library:
/// every connection, differentiation and multiplication matrix is one.
class BandedMatrix {
public:
    BandedMatrix() = default;

    BandedMatrix(index_t rows, index_t cols, index_t lower, index_t upper)
        : rows_(rows), cols_(cols), lower_(lower), upper_(upper),
          data_(static_cast<std::size_t>(cols * (lower + upper + 1)), 0.0) {
        assert(rows >= 0 && cols >= 0 && lower >= 0 && upper >= 0);
    }

    static BandedMatrix identity(index_t n) {
        BandedMatrix I(n, n, 0, 0);
        for (index_t i = 0; i < n; ++i) I.at(i, i) = 1.0;
        return I;
    }

    index_t rows() const { return rows_; }
    index_t cols() const { return cols_; }
    index_t lower_bandwidth() const { return lower_; }
    index_t upper_bandwidth() const { return upper_; }

    bool inside_band(index_t i, index_t j) const {
        return i >= 0 && j >= 0 && i < rows_ && j < cols_ && j - i <= upper_ &&
               i - j <= lower_;
    }

    double operator()(index_t i, index_t j) const {
        if (!inside_band(i, j)) return 0.0;
        return data_[offset(i, j)];
    }

    /// Mutable access; (i, j) must be admissible.
    double& at(index_t i, index_t j) {
        assert(inside_band(i, j));
        return data_[offset(i, j)];
    }

    /// Top-left block, band structure preserved.
    BandedMatrix truncated(index_t r, index_t c) const {
        r = std::min(r, rows_);
        c = std::min(c, cols_);
        BandedMatrix B(r, c, lower_, upper_);
        for (index_t j = 0; j < c; ++j)
            for (index_t i = std::max<index_t>(0, j - upper_);
                 i <= std::min(r - 1, j + lower_); ++i)
                B.at(i, j) = (*this)(i, j);
        return B;
    }

    BandedMatrix transpose() const {
        BandedMatrix T(cols_, rows_, upper_, lower_);
        for (index_t j = 0; j < cols_; ++j)
            for (index_t i = std::max<index_t>(0, j - upper_);
                 i <= std::min(rows_ - 1, j + lower_); ++i)
                T.at(j, i) = (*this)(i, j);
        return T;
    }

    /// y = A x. x may be shorter than cols(); missing entries read as 0.
    std::vector<double> apply(std::span<const double> x) const {
        std::vector<double> y(static_cast<std::size_t>(rows_), 0.0);
        const index_t nx = static_cast<index_t>(x.size());
        for (index_t j = 0; j < std::min(cols_, nx); ++j) {
            const double xj = x[static_cast<std::size_t>(j)];
            if (xj == 0.0) continue;
            const index_t ilo = std::max<index_t>(0, j - upper_);
            const index_t ihi = std::min(rows_ - 1, j + lower_);
            for (index_t i = ilo; i <= ihi; ++i)
                y[static_cast<std::size_t>(i)] += data_[offset(i, j)] * xj;
        }
        return y;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    /// Largest |j - i| with |entry| > tol above (positive) the diagonal.
    index_t measured_upper_bandwidth(double tol = 0.0) const {
        index_t bw = 0;
        for (index_t j = 0; j < cols_; ++j)
            for (index_t i = std::max<index_t>(0, j - upper_); i < j; ++i)
                if (std::abs((*this)(i, j)) > tol) bw = std::max(bw, j - i);
        return bw;
    }

    index_t measured_lower_bandwidth(double tol = 0.0) const {
        index_t bw = 0;
        for (index_t j = 0; j < cols_; ++j)
            for (index_t i = j + 1; i <= std::min(rows_ - 1, j + lower_); ++i)
                if (std::abs((*this)(i, j)) > tol) bw = std::max(bw, i - j);
        return bw;
    }

    /// Shrink the declared bandwidths to the measured ones.
    BandedMatrix trimmed(double tol = 0.0) const {
        BandedMatrix B(rows_, cols_, measured_lower_bandwidth(tol),
                       measured_upper_bandwidth(tol));
        for (index_t j = 0; j < cols_; ++j)
            for (index_t i = std::max<index_t>(0, j - B.upper_bandwidth());
                 i <= std::min(rows_ - 1, j + B.lower_bandwidth()); ++i)
                if (std::abs((*this)(i, j)) > tol) B.at(i, j) = (*this)(i, j);
        return B;
    }

private:
    std::size_t offset(index_t i, index_t j) const {
        return static_cast<std::size_t>(j * (lower_ + upper_ + 1) +
                                        (i - j + upper_));
    }

    index_t rows_ = 0, cols_ = 0, lower_ = 0, upper_ = 0;
    std::vector<double> data_;
};

inline BandedMatrix operator*(const BandedMatrix& A, const BandedMatrix& B) {
    if (A.cols() != B.rows())
        throw DimensionMismatch("banded multiply: inner dimensions differ");
    BandedMatrix C(A.rows(), B.cols(), A.lower_bandwidth() + B.lower_bandwidth(),
                   A.upper_bandwidth() + B.upper_bandwidth());
    for (index_t j = 0; j < B.cols(); ++j) {
        const index_t klo = std::max<index_t>(0, j - B.upper_bandwidth());
        const index_t khi =
            std::min(B.rows() - 1, j + B.lower_bandwidth());
        for (index_t k = klo; k <= khi; ++k) {
            const double bkj = B(k, j);
            if (bkj == 0.0) continue;
            const index_t ilo = std::max<index_t>(0, k - A.upper_bandwidth());
            const index_t ihi =
                std::min(A.rows() - 1, k + A.lower_bandwidth());
            for (index_t i = ilo; i <= ihi; ++i)
                if (C.inside_band(i, j)) C.at(i, j) += A(i, k) * bkj;
        }
    }
    return C;
}

inline BandedMatrix add_scaled(const BandedMatrix& A, double alpha,
                               const BandedMatrix& B, double beta) {
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw DimensionMismatch("banded add: shapes differ");
    BandedMatrix C(A.rows(), A.cols(),
                   std::max(A.lower_bandwidth(), B.lower_bandwidth()),
                   std::max(A.upper_bandwidth(), B.upper_bandwidth()));
    for (index_t j = 0; j < C.cols(); ++j)
        for (index_t i = std::max<index_t>(0, j - C.upper_bandwidth());
             i <= std::min(C.rows() - 1, j + C.lower_bandwidth()); ++i) {
            const double v = alpha * A(i, j) + beta * B(i, j);
            if (v != 0.0) C.at(i, j) = v;
        }
    return C;
}

inline BandedMatrix operator+(const BandedMatrix& A, const BandedMatrix& B) {
    return add_scaled(A, 1.0, B, 1.0);
}

inline BandedMatrix operator-(const BandedMatrix& A, const BandedMatrix& B) {
    return add_scaled(A, 1.0, B, -1.0);
}

inline BandedMatrix operator*(double s, const BandedMatrix& A) {
    BandedMatrix C = A;
    for (index_t j = 0; j < C.cols(); ++j)
        for (index_t i = std::max<index_t>(0, j - C.upper_bandwidth());
             i <= std::min(C.rows() - 1, j + C.lower_bandwidth()); ++i)
            C.at(i, j) *= s;
    return C;
}

/// tI - A for square banded A (band widened to include the diagonal).
inline BandedMatrix shift_identity_minus(double t, const BandedMatrix& A) {
    BandedMatrix C(A.rows(), A.cols(), A.lower_bandwidth(),
                   A.upper_bandwidth());
    for (index_t j = 0; j < C.cols(); ++j)
        for (index_t i = std::max<index_t>(0, j - C.upper_bandwidth());
             i <= std::min(C.rows() - 1, j + C.lower_bandwidth()); ++i)
            C.at(i, j) = (i == j ? t : 0.0) - A(i, j);
    return C;
}

// ---------------------------------------------------------------------------
// Cholesky
// ---------------------------------------------------------------------------

/// Upper Cholesky factor of a symmetric positive-definite banded matrix:
/// A = R^T R with upper_bw(R) = upper_bw(A) and diag(R) > 0.
///
/// A pivot at or below 1e-14 * max-diagonal throws NotPositiveDefinite so
/// callers can fall back to stepwise raising or a QR route.
inline BandedMatrix banded_cholesky(const BandedMatrix& A) {
    if (A.rows() != A.cols())
        throw DimensionMismatch("banded_cholesky: matrix not square");
    const index_t n = A.rows();
    const index_t b = A.upper_bandwidth();
    BandedMatrix R(n, n, 0, b);

    double max_diag = 0.0;
    for (index_t i = 0; i < n; ++i)
        max_diag = std::max(max_diag, std::abs(A(i, i)));
    const double tol = 1e-14 * max_diag;

    for (index_t j = 0; j < n; ++j) {
        double d = A(j, j);
        for (index_t k = std::max<index_t>(0, j - b); k < j; ++k) {
            const double rkj = R(k, j);
            d -= rkj * rkj;
        }
        if (!(d > tol))
            throw NotPositiveDefinite("banded_cholesky: pivot " +
                                      std::to_string(d) + " at index " +
                                      std::to_string(j));
        const double rjj = std::sqrt(d);
        R.at(j, j) = rjj;
        for (index_t i = j + 1; i <= std::min(n - 1, j + b); ++i) {
            double s = A(j, i);
            for (index_t k = std::max<index_t>(0, i - b); k < j; ++k)
                s -= R(k, j) * R(k, i);
            R.at(j, i) = s / rjj;
        }
    }
    return R;
}

// ---------------------------------------------------------------------------
// Householder QR
// ---------------------------------------------------------------------------

/// Orthogonal factor of a banded QR held as a list of Householder
/// reflectors H = I - tau v v^T, each supported on a short index window.
/// Q = H_0 H_1 ... H_{k-1}.
class HouseholderQ {
public:
    struct Reflector {
        index_t start = 0;
        std::vector<double> v;
        double tau = 0.0;
    };

    HouseholderQ() = default;
    explicit HouseholderQ(index_t n) : n_(n) {}

    index_t size() const { return n_; }
    const std::vector<Reflector>& reflectors() const { return reflectors_; }

    void push(Reflector r) { reflectors_.push_back(std::move(r)); }

    /// x <- Q x
    void apply(std::span<double> x) const {
        for (auto it = reflectors_.rbegin(); it != reflectors_.rend(); ++it)
            apply_reflector(*it, x);
    }

    /// x <- Q^T x
    void apply_transpose(std::span<double> x) const {
        for (const auto& r : reflectors_) apply_reflector(r, x);
    }

    static void apply_reflector(const Reflector& r, std::span<double> x) {
        if (r.tau == 0.0) return;
        const index_t w = static_cast<index_t>(r.v.size());
        const index_t nx = static_cast<index_t>(x.size());
        const index_t hi = std::min(r.start + w, nx);
        double dot = 0.0;
        for (index_t i = r.start; i < hi; ++i)
            dot += r.v[static_cast<std::size_t>(i - r.start)] *
                   x[static_cast<std::size_t>(i)];
        dot *= r.tau;
        for (index_t i = r.start; i < hi; ++i)
            x[static_cast<std::size_t>(i)] -=
                dot * r.v[static_cast<std::size_t>(i - r.start)];
    }

private:
    index_t n_ = 0;
    std::vector<Reflector> reflectors_;
};

struct BandedQR {
    HouseholderQ Q;
    BandedMatrix R;
};

/// Positive-phase Householder QR of a square banded matrix: A = Q R with
/// diag(R) > 0 (signs absorbed into Q) and upper_bw(R) <= lower + upper.
///
/// Reflectors are built LAPACK dlarfgp-style so that H x = +||x|| e_1; the
/// cancellation-prone v_0 is computed from the tail sum when x_0 > 0.
inline BandedQR banded_qr(const BandedMatrix& A) {
    if (A.rows() != A.cols())
        throw DimensionMismatch("banded_qr: matrix not square");
    const index_t n = A.rows();
    const index_t l = A.lower_bandwidth();
    const index_t u = A.upper_bandwidth();

    // Working band: lower l (annihilated as we go), upper l + u (fill-in).
    BandedMatrix W(n, n, l, l + u);
    for (index_t j = 0; j < n; ++j)
        for (index_t i = std::max<index_t>(0, j - u);
             i <= std::min(n - 1, j + l); ++i)
            W.at(i, j) = A(i, j);

    HouseholderQ Q(n);
    for (index_t j = 0; j < n; ++j) {
        const index_t w = std::min(n - 1, j + l) - j + 1;
        double nrm2 = 0.0;
        for (index_t i = 0; i < w; ++i) {
            const double x = W(j + i, j);
            nrm2 += x * x;
        }
        const double nrm = std::sqrt(nrm2);
        if (nrm == 0.0)
            throw RankDeficient("banded_qr: zero column " + std::to_string(j));

        const double x0 = W(j, j);
        double tail2 = nrm2 - x0 * x0;
        if (tail2 < 0.0) tail2 = 0.0;

        HouseholderQ::Reflector ref;
        ref.start = j;
        if (w == 1 || tail2 == 0.0) {
            if (x0 < 0.0) {
                // Plain sign flip: H = I - 2 e_j e_j^T on the window.
                ref.v.assign(1, 1.0);
                ref.tau = 2.0;
                W.at(j, j) = -x0;
            } else {
                ref.v.assign(1, 0.0);
                ref.tau = 0.0;
            }
            Q.push(std::move(ref));
            continue;
        }

        const double v0 = (x0 <= 0.0) ? x0 - nrm : -tail2 / (x0 + nrm);
        ref.v.resize(static_cast<std::size_t>(w));
        ref.v[0] = v0;
        for (index_t i = 1; i < w; ++i)
            ref.v[static_cast<std::size_t>(i)] = W(j + i, j);
        ref.tau = -1.0 / (nrm * v0);

        // Update the affected columns of the working band.
        for (index_t c = j; c <= std::min(n - 1, j + l + u); ++c) {
            double dot = 0.0;
            for (index_t i = 0; i < w; ++i)
                dot += ref.v[static_cast<std::size_t>(i)] * W(j + i, c);
            dot *= ref.tau;
            if (dot == 0.0) continue;
            for (index_t i = 0; i < w; ++i)
                W.at(j + i, c) -= dot * ref.v[static_cast<std::size_t>(i)];
        }
        W.at(j, j) = nrm; // exact by construction
        for (index_t i = 1; i < w; ++i) W.at(j + i, j) = 0.0;
        Q.push(std::move(ref));
    }

    BandedMatrix R(n, n, 0, l + u);
    for (index_t j = 0; j < n; ++j)
        for (index_t i = std::max<index_t>(0, j - (l + u)); i <= j; ++i)
            R.at(i, j) = W(i, j);
    return {std::move(Q), std::move(R)};
}

// ---------------------------------------------------------------------------
// O(N) similarity transforms
// ---------------------------------------------------------------------------

/// R X R^{-1} for tridiagonal X and upper-triangular banded R, without
/// forming R^{-1}. The result is a Jacobi matrix, hence tridiagonal; only
/// the three entries per column are computed, solving Y R = R X column by
/// column. Linear work in N.
inline BandedMatrix similarity_via_R(const BandedMatrix& X,
                                     const BandedMatrix& R) {
    if (X.rows() != X.cols() || R.rows() != R.cols() || X.rows() != R.rows())
        throw DimensionMismatch("similarity_via_R: shapes differ");
    const index_t n = X.rows();
    const index_t w = R.upper_bandwidth();

    double max_diag = 0.0;
    for (index_t i = 0; i < n; ++i)
        max_diag = std::max(max_diag, std::abs(R(i, i)));
    const double tol = 1e-300 + 1e-15 * max_diag;

    const BandedMatrix M = R * X; // lower 1, upper w + 1
    BandedMatrix Y(n, n, 1, 1);
    for (index_t j = 0; j < n; ++j) {
        const double rjj = R(j, j);
        if (std::abs(rjj) <= tol)
            throw SingularR("similarity_via_R: R diagonal ~ 0 at " +
                            std::to_string(j));
        for (index_t i = std::max<index_t>(0, j - 1);
             i <= std::min(n - 1, j + 1); ++i) {
            double s = M(i, j);
            for (index_t k = std::max({i - 1, j - w, index_t(0)});
                 k <= std::min(i + 1, j - 1); ++k)
                s -= Y(i, k) * R(k, j);
            Y.at(i, j) = s / rjj;
        }
    }
    return Y;
}

/// Q^T X Q for tridiagonal X and Q from the QR of a banded matrix. Each
/// reflector touches a fixed-width block along the band; entries finalized
/// in the top left are never revisited. Linear work in N.
inline BandedMatrix similarity_via_Q(const BandedMatrix& X,
                                     const HouseholderQ& Q) {
    if (X.rows() != X.cols() || X.rows() != Q.size())
        throw DimensionMismatch("similarity_via_Q: shapes differ");
    const index_t n = X.rows();

    index_t wmax = 1;
    for (const auto& r : Q.reflectors())
        wmax = std::max(wmax, static_cast<index_t>(r.v.size()));
    const index_t bw = 2 * wmax; // working band; holds the bulge

    BandedMatrix W(n, n, bw, bw);
    for (index_t j = 0; j < n; ++j)
        for (index_t i = std::max<index_t>(0, j - 1);
             i <= std::min(n - 1, j + 1); ++i)
            W.at(i, j) = X(i, j);

    std::vector<double> buf(static_cast<std::size_t>(2 * bw + wmax), 0.0);
    for (const auto& ref : Q.reflectors()) {
        if (ref.tau == 0.0) continue;
        const index_t j = ref.start;
        const index_t w = static_cast<index_t>(ref.v.size());
        const index_t lo = std::max<index_t>(0, j - bw);
        const index_t hi = std::min(n - 1, j + w - 1 + bw);

        // Rows of the window, applied to columns [lo, hi]: W <- H W.
        for (index_t c = lo; c <= hi; ++c) {
            double dot = 0.0;
            for (index_t i = 0; i < w; ++i)
                dot += ref.v[static_cast<std::size_t>(i)] * W(j + i, c);
            dot *= ref.tau;
            if (dot == 0.0) continue;
            for (index_t i = 0; i < w; ++i)
                if (W.inside_band(j + i, c))
                    W.at(j + i, c) -= dot * ref.v[static_cast<std::size_t>(i)];
        }
        // Columns of the window, applied to rows [lo, hi]: W <- W H.
        for (index_t r = lo; r <= hi; ++r) {
            double dot = 0.0;
            for (index_t i = 0; i < w; ++i)
                dot += ref.v[static_cast<std::size_t>(i)] * W(r, j + i);
            dot *= ref.tau;
            if (dot == 0.0) continue;
            for (index_t i = 0; i < w; ++i)
                if (W.inside_band(r, j + i))
                    W.at(r, j + i) -= dot * ref.v[static_cast<std::size_t>(i)];
        }
    }

    BandedMatrix Y(n, n, 1, 1);
    for (index_t j = 0; j < n; ++j)
        for (index_t i = std::max<index_t>(0, j - 1);
             i <= std::min(n - 1, j + 1); ++i)
            Y.at(i, j) = W(i, j);
    return Y;
}

// ---------------------------------------------------------------------------
// Banded LU with partial pivoting
// ---------------------------------------------------------------------------

/// LU factorization of a square banded matrix with partial pivoting,
/// GBTRF-style: the working upper bandwidth grows by the lower bandwidth.
class BandedLU {
public:
    explicit BandedLU(const BandedMatrix& A)
        : n_(A.rows()), l_(A.lower_bandwidth()),
          u_(A.lower_bandwidth() + A.upper_bandwidth()),
          W_(A.rows(), A.cols(), A.lower_bandwidth(),
             A.lower_bandwidth() + A.upper_bandwidth()),
          piv_(static_cast<std::size_t>(A.rows())) {
        if (A.rows() != A.cols())
            throw DimensionMismatch("BandedLU: matrix not square");
        for (index_t j = 0; j < n_; ++j)
            for (index_t i = std::max<index_t>(0, j - A.upper_bandwidth());
                 i <= std::min(n_ - 1, j + l_); ++i)
                W_.at(i, j) = A(i, j);
        factor(A.max_abs());
    }

    /// Solve A x = b.
    std::vector<double> solve(std::span<const double> b) const {
        if (static_cast<index_t>(b.size()) != n_)
            throw DimensionMismatch("BandedLU::solve: rhs length");
        std::vector<double> x(b.begin(), b.end());
        // Forward: apply the recorded row operations.
        for (index_t j = 0; j < n_; ++j) {
            const index_t p = piv_[static_cast<std::size_t>(j)];
            if (p != j) std::swap(x[static_cast<std::size_t>(j)],
                                  x[static_cast<std::size_t>(p)]);
            const double xj = x[static_cast<std::size_t>(j)];
            if (xj == 0.0) continue;
            for (index_t i = j + 1; i <= std::min(n_ - 1, j + l_); ++i)
                x[static_cast<std::size_t>(i)] -= W_(i, j) * xj;
        }
        // Back substitution with U.
        for (index_t i = n_ - 1; i >= 0; --i) {
            double s = x[static_cast<std::size_t>(i)];
            for (index_t j = i + 1; j <= std::min(n_ - 1, i + u_); ++j)
                s -= W_(i, j) * x[static_cast<std::size_t>(j)];
            x[static_cast<std::size_t>(i)] = s / W_(i, i);
        }
        return x;
    }

private:
    void factor(double scale) {
        const double tol = 1e-300 + 1e-16 * scale;
        for (index_t j = 0; j < n_; ++j) {
            index_t p = j;
            double pmax = std::abs(W_(j, j));
            for (index_t i = j + 1; i <= std::min(n_ - 1, j + l_); ++i)
                if (std::abs(W_(i, j)) > pmax) {
                    pmax = std::abs(W_(i, j));
                    p = i;
                }
            if (pmax <= tol)
                throw SingularSystem("BandedLU: zero pivot at " +
                                     std::to_string(j));
            piv_[static_cast<std::size_t>(j)] = p;
            if (p != j)
                for (index_t c = j; c <= std::min(n_ - 1, j + u_); ++c) {
                    const double t = W_(j, c);
                    W_.at(j, c) = W_(p, c);
                    W_.at(p, c) = t;
                }
            const double d = W_(j, j);
            for (index_t i = j + 1; i <= std::min(n_ - 1, j + l_); ++i) {
                const double m = W_(i, j) / d;
                W_.at(i, j) = m;
                if (m == 0.0) continue;
                for (index_t c = j + 1; c <= std::min(n_ - 1, j + u_); ++c)
                    W_.at(i, c) -= m * W_(j, c);
            }
        }
    }

    index_t n_, l_, u_;
    BandedMatrix W_;
    std::vector<index_t> piv_;
};

// ---------------------------------------------------------------------------
// Dense fallback solver
// ---------------------------------------------------------------------------

/// In-place dense LU with partial pivoting; A is row-major n x n.
inline std::vector<double> dense_solve(std::vector<double> A,
                                       std::vector<double> b, index_t n) {
    double scale = 0.0;
    for (double v : A) scale = std::max(scale, std::abs(v));
    const double tol = 1e-300 + 1e-16 * scale;
    auto a = [&](index_t i, index_t j) -> double& {
        return A[static_cast<std::size_t>(i * n + j)];
    };
    for (index_t j = 0; j < n; ++j) {
        index_t p = j;
        for (index_t i = j + 1; i < n; ++i)
            if (std::abs(a(i, j)) > std::abs(a(p, j))) p = i;
        if (std::abs(a(p, j)) <= tol)
            throw SingularSystem("dense_solve: zero pivot at " +
                                 std::to_string(j));
        if (p != j) {
            for (index_t c = 0; c < n; ++c) std::swap(a(j, c), a(p, c));
            std::swap(b[static_cast<std::size_t>(j)],
                      b[static_cast<std::size_t>(p)]);
        }
        for (index_t i = j + 1; i < n; ++i) {
            const double m = a(i, j) / a(j, j);
            if (m == 0.0) continue;
            a(i, j) = m;
            for (index_t c = j + 1; c < n; ++c) a(i, c) -= m * a(j, c);
            b[static_cast<std::size_t>(i)] -= m * b[static_cast<std::size_t>(j)];
        }
    }
    for (index_t i = n - 1; i >= 0; --i) {
        double s = b[static_cast<std::size_t>(i)];
        for (index_t j = i + 1; j < n; ++j)
            s -= a(i, j) * b[static_cast<std::size_t>(j)];
        b[static_cast<std::size_t>(i)] = s / a(i, i);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Bordered (almost banded) systems
// ---------------------------------------------------------------------------

/// Banded core plus a few dense top rows (boundary / continuity conditions)
/// and optional dense trailing columns (tau columns). The assembled matrix
/// is square: (top_rows.size() + core.rows()) x core.cols(), with the last
/// extra_cols.size() columns of the core region replaced by the dense
/// columns.
struct BorderedSystem {
    BandedMatrix core;
    std::vector<std::vector<double>> top_rows;
    std::vector<std::vector<double>> extra_cols; // each of length core.rows()

    index_t size() const {
        return static_cast<index_t>(top_rows.size()) + core.rows();
    }

    double entry(index_t i, index_t j) const {
        const index_t r = static_cast<index_t>(top_rows.size());
        const index_t n = size();
        const index_t e = static_cast<index_t>(extra_cols.size());
        if (i < r) {
            const auto& row = top_rows[static_cast<std::size_t>(i)];
            return j < static_cast<index_t>(row.size())
                       ? row[static_cast<std::size_t>(j)]
                       : 0.0;
        }
        if (j >= n - e)
            return extra_cols[static_cast<std::size_t>(j - (n - e))]
                             [static_cast<std::size_t>(i - r)];
        return core(i - r, j);
    }
};

/// Solve a bordered system. The dense border is eliminated against the
/// banded core through a low-rank (Woodbury) correction of a genuinely
/// banded matrix B, so the core's band structure is what gets factored.
/// Small systems and singular B fall back to a dense solve.
inline std::vector<double> bordered_solve(const BorderedSystem& S,
                                          std::span<const double> rhs) {
    const index_t n = S.size();
    const index_t r = static_cast<index_t>(S.top_rows.size());
    const index_t e = static_cast<index_t>(S.extra_cols.size());
    if (S.core.cols() != n)
        throw DimensionMismatch("bordered_solve: system not square");
    if (static_cast<index_t>(rhs.size()) != n)
        throw DimensionMismatch("bordered_solve: rhs length");

    auto solve_dense = [&]() {
        std::vector<double> A(static_cast<std::size_t>(n * n), 0.0);
        for (index_t i = 0; i < n; ++i)
            for (index_t j = 0; j < n; ++j)
                A[static_cast<std::size_t>(i * n + j)] = S.entry(i, j);
        return dense_solve(std::move(A),
                           std::vector<double>(rhs.begin(), rhs.end()), n);
    };
    if (n < 64) return solve_dense();

    // B: identity rows on top, the banded core below (dense columns replaced
    // by unit diagonal). A = B + sum of rank-one row/column corrections.
    const index_t lb = S.core.lower_bandwidth() + r;
    const index_t ub = std::max<index_t>(S.core.upper_bandwidth() - r, 0);
    BandedMatrix B(n, n, lb, std::max<index_t>(ub, r));
    for (index_t i = 0; i < r; ++i) B.at(i, i) = 1.0;
    for (index_t i = 0; i < S.core.rows(); ++i) {
        const index_t gi = i + r;
        for (index_t j = std::max<index_t>(0, i - S.core.lower_bandwidth());
             j <= std::min(n - 1, i + S.core.upper_bandwidth()); ++j) {
            if (!B.inside_band(gi, j)) {
                if (S.core(i, j) != 0.0)
                    return solve_dense(); // band bookkeeping surprise
                continue;
            }
            if (j >= n - e)
                B.at(gi, j) = (gi == j) ? 1.0 : 0.0;
            else
                B.at(gi, j) = S.core(i, j);
        }
        if (gi >= n - e && !B.inside_band(gi, gi)) return solve_dense();
        if (gi >= n - e) B.at(gi, gi) = 1.0;
    }

    const index_t k = r + e;
    // U: n x k, V: k x n with A = B + U V.
    std::vector<std::vector<double>> U(static_cast<std::size_t>(k)),
        V(static_cast<std::size_t>(k));
    for (index_t i = 0; i < r; ++i) {
        auto& u = U[static_cast<std::size_t>(i)];
        auto& v = V[static_cast<std::size_t>(i)];
        u.assign(static_cast<std::size_t>(n), 0.0);
        v.assign(static_cast<std::size_t>(n), 0.0);
        u[static_cast<std::size_t>(i)] = 1.0;
        for (index_t j = 0; j < n; ++j)
            v[static_cast<std::size_t>(j)] = S.entry(i, j) - B(i, j);
    }
    for (index_t q = 0; q < e; ++q) {
        auto& u = U[static_cast<std::size_t>(r + q)];
        auto& v = V[static_cast<std::size_t>(r + q)];
        u.assign(static_cast<std::size_t>(n), 0.0);
        v.assign(static_cast<std::size_t>(n), 0.0);
        const index_t c = n - e + q;
        for (index_t i = r; i < n; ++i)
            u[static_cast<std::size_t>(i)] = S.entry(i, c) - B(i, c);
        v[static_cast<std::size_t>(c)] = 1.0;
    }

    std::vector<double> x;
    try {
        BandedLU lu(B);
        x = lu.solve(rhs);
        if (k > 0) {
            std::vector<std::vector<double>> Z(static_cast<std::size_t>(k));
            for (index_t q = 0; q < k; ++q)
                Z[static_cast<std::size_t>(q)] =
                    lu.solve(U[static_cast<std::size_t>(q)]);
            // Capacitance C = I + V Z, small dense k x k.
            std::vector<double> C(static_cast<std::size_t>(k * k), 0.0);
            for (index_t a = 0; a < k; ++a)
                for (index_t b = 0; b < k; ++b) {
                    double s = (a == b) ? 1.0 : 0.0;
                    const auto& va = V[static_cast<std::size_t>(a)];
                    const auto& zb = Z[static_cast<std::size_t>(b)];
                    for (index_t i = 0; i < n; ++i)
                        s += va[static_cast<std::size_t>(i)] *
                             zb[static_cast<std::size_t>(i)];
                    C[static_cast<std::size_t>(a * k + b)] = s;
                }
            std::vector<double> w(static_cast<std::size_t>(k), 0.0);
            for (index_t a = 0; a < k; ++a) {
                double s = 0.0;
                const auto& va = V[static_cast<std::size_t>(a)];
                for (index_t i = 0; i < n; ++i)
                    s += va[static_cast<std::size_t>(i)] *
                         x[static_cast<std::size_t>(i)];
                w[static_cast<std::size_t>(a)] = s;
            }
            const std::vector<double> y = dense_solve(std::move(C), std::move(w), k);
            for (index_t i = 0; i < n; ++i) {
                double corr = 0.0;
                for (index_t q = 0; q < k; ++q)
                    corr += Z[static_cast<std::size_t>(q)]
                             [static_cast<std::size_t>(i)] *
                            y[static_cast<std::size_t>(q)];
                x[static_cast<std::size_t>(i)] -= corr;
            }
        }
    } catch (const SingularSystem&) {
        return solve_dense();
    }
    return x;
}

} // namespace annular
