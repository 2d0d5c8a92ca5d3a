#pragma once

#include <stdexcept>
#include <string>

namespace annular {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A Cholesky pivot fell below tolerance; the matrix is numerically
/// indefinite. Callers may retry with stepwise raising or a QR route.
struct NotPositiveDefinite : Error {
    explicit NotPositiveDefinite(const std::string& msg) : Error(msg) {}
};

/// A zero column norm was met during a QR factorization.
struct RankDeficient : Error {
    explicit RankDeficient(const std::string& msg) : Error(msg) {}
};

/// A diagonal entry of a triangular factor is below tolerance.
struct SingularR : Error {
    explicit SingularR(const std::string& msg) : Error(msg) {}
};

/// A linear system solve met a zero pivot.
struct SingularSystem : Error {
    explicit SingularSystem(const std::string& msg) : Error(msg) {}
};

struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& msg) : Error(msg) {}
};

struct InvalidParameter : Error {
    explicit InvalidParameter(const std::string& msg) : Error(msg) {}
};

/// An (n, m, j) triple that violates the mode pairing rules.
struct InvalidMode : Error {
    explicit InvalidMode(const std::string& msg) : Error(msg) {}
};

/// Sampled values do not match the expected structured grid.
struct GridMismatch : Error {
    explicit GridMismatch(const std::string& msg) : Error(msg) {}
};

/// Cell radii are not strictly increasing or do not end at 1.
struct MeshError : Error {
    explicit MeshError(const std::string& msg) : Error(msg) {}
};

} // namespace annular
