#pragma once

// Small shared vocabulary for the transport-regularity lab: fixed-dimension
// points and matrices (d = 1 or 2), error codes, deterministic reductions.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace otlab {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
    EmptyRestriction,
    MassMismatch,
    ProblemTooLarge,
    ConvergenceFailure,
    IncompatibleData,
    SolverFailure,
    FitDegenerate,
    NotSymmetric,
    SmallnessViolated,
    DomainExceeded,
    InsufficientTrace,
    ConfigError,
    IoError,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::EmptyRestriction:   return "EmptyRestriction";
        case ErrorCode::MassMismatch:       return "MassMismatch";
        case ErrorCode::ProblemTooLarge:    return "ProblemTooLarge";
        case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
        case ErrorCode::IncompatibleData:   return "IncompatibleData";
        case ErrorCode::SolverFailure:      return "SolverFailure";
        case ErrorCode::FitDegenerate:      return "FitDegenerate";
        case ErrorCode::NotSymmetric:       return "NotSymmetric";
        case ErrorCode::SmallnessViolated:  return "SmallnessViolated";
        case ErrorCode::DomainExceeded:     return "DomainExceeded";
        case ErrorCode::InsufficientTrace:  return "InsufficientTrace";
        case ErrorCode::ConfigError:        return "ConfigError";
        case ErrorCode::IoError:            return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what, double payload = 0.0)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
          code_(code),
          payload_(payload) {}

    ErrorCode code() const { return code_; }
    // Offending quantity when one exists (mass defect, smallness value, ...).
    double payload() const { return payload_; }

  private:
    ErrorCode code_;
    double payload_;
};

// Input-shaped errors exit with status 2, everything else with 1.
inline bool is_input_error(ErrorCode c) {
    return c == ErrorCode::ConfigError || c == ErrorCode::MassMismatch ||
           c == ErrorCode::IoError || c == ErrorCode::EmptyRestriction;
}

// ---------------------------------------------------------------------------
// Points and small matrices
// ---------------------------------------------------------------------------

template <int D>
using Vec = std::array<double, static_cast<std::size_t>(D)>;

template <int D>
inline Vec<D> vec_zero() {
    Vec<D> v{};
    return v;
}

template <std::size_t N>
inline std::array<double, N> operator+(const std::array<double, N>& a,
                                       const std::array<double, N>& b) {
    std::array<double, N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + b[i];
    return r;
}

template <std::size_t N>
inline std::array<double, N> operator-(const std::array<double, N>& a,
                                       const std::array<double, N>& b) {
    std::array<double, N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] - b[i];
    return r;
}

template <std::size_t N>
inline std::array<double, N> operator*(double s, const std::array<double, N>& a) {
    std::array<double, N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = s * a[i];
    return r;
}

template <std::size_t N>
inline double dot(const std::array<double, N>& a, const std::array<double, N>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += a[i] * b[i];
    return s;
}

template <std::size_t N>
inline double norm2(const std::array<double, N>& a) {
    return dot(a, a);
}

template <std::size_t N>
inline double norm(const std::array<double, N>& a) {
    return std::sqrt(norm2(a));
}

// Row-major d x d matrix.
template <int D>
struct Mat {
    std::array<double, D * D> m{};

    double& operator()(int i, int j) { return m[i * D + j]; }
    double operator()(int i, int j) const { return m[i * D + j]; }

    static Mat identity() {
        Mat r;
        for (int i = 0; i < D; ++i) r(i, i) = 1.0;
        return r;
    }
};

template <int D>
inline Mat<D> operator+(const Mat<D>& a, const Mat<D>& b) {
    Mat<D> r;
    for (int i = 0; i < D * D; ++i) r.m[i] = a.m[i] + b.m[i];
    return r;
}

template <int D>
inline Mat<D> operator-(const Mat<D>& a, const Mat<D>& b) {
    Mat<D> r;
    for (int i = 0; i < D * D; ++i) r.m[i] = a.m[i] - b.m[i];
    return r;
}

template <int D>
inline Mat<D> operator*(double s, const Mat<D>& a) {
    Mat<D> r;
    for (int i = 0; i < D * D; ++i) r.m[i] = s * a.m[i];
    return r;
}

template <int D>
inline Vec<D> operator*(const Mat<D>& a, const Vec<D>& x) {
    Vec<D> r{};
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) r[i] += a(i, j) * x[j];
    return r;
}

template <int D>
inline Mat<D> operator*(const Mat<D>& a, const Mat<D>& b) {
    Mat<D> r;
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
            double s = 0.0;
            for (int k = 0; k < D; ++k) s += a(i, k) * b(k, j);
            r(i, j) = s;
        }
    return r;
}

template <int D>
inline Mat<D> transpose(const Mat<D>& a) {
    Mat<D> r;
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) r(i, j) = a(j, i);
    return r;
}

template <int D>
inline double det(const Mat<D>& a) {
    if constexpr (D == 1) return a(0, 0);
    else return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
}

template <int D>
inline double trace(const Mat<D>& a) {
    double t = 0.0;
    for (int i = 0; i < D; ++i) t += a(i, i);
    return t;
}

template <int D>
inline Mat<D> inverse(const Mat<D>& a) {
    Mat<D> r;
    double d = det(a);
    if (std::abs(d) < 1e-300)
        throw Error(ErrorCode::SolverFailure, "singular matrix in inverse()");
    if constexpr (D == 1) {
        r(0, 0) = 1.0 / d;
    } else {
        r(0, 0) = a(1, 1) / d;
        r(1, 1) = a(0, 0) / d;
        r(0, 1) = -a(0, 1) / d;
        r(1, 0) = -a(1, 0) / d;
    }
    return r;
}

template <int D>
inline double frobenius_norm(const Mat<D>& a) {
    double s = 0.0;
    for (int i = 0; i < D * D; ++i) s += a.m[i] * a.m[i];
    return std::sqrt(s);
}

template <int D>
inline double max_abs_entry(const Mat<D>& a) {
    double s = 0.0;
    for (int i = 0; i < D * D; ++i) s = std::max(s, std::abs(a.m[i]));
    return s;
}

// Eigendecomposition of a symmetric matrix; for d=2 the closed form
// (atan2 rotation) is both faster and more accurate than iterative routines.
template <int D>
struct SymEig {
    Vec<D> eigenvalues;
    Mat<D> eigenvectors;  // columns
};

template <int D>
inline SymEig<D> sym_eig(const Mat<D>& a) {
    SymEig<D> r;
    if constexpr (D == 1) {
        r.eigenvalues[0] = a(0, 0);
        r.eigenvectors(0, 0) = 1.0;
    } else {
        const double p = a(0, 0), q = a(1, 1), c = 0.5 * (a(0, 1) + a(1, 0));
        const double mean = 0.5 * (p + q);
        const double h = std::hypot(0.5 * (p - q), c);
        r.eigenvalues[0] = mean - h;
        r.eigenvalues[1] = mean + h;
        // Rotation angle; when the matrix is (near) scalar any frame works.
        const double ang = 0.5 * std::atan2(2.0 * c, p - q);
        const double cs = std::cos(ang), sn = std::sin(ang);
        // Column for the larger eigenvalue is (cs, sn).
        r.eigenvectors(0, 0) = -sn;
        r.eigenvectors(1, 0) = cs;
        r.eigenvectors(0, 1) = cs;
        r.eigenvectors(1, 1) = sn;
    }
    return r;
}

// Spectral norm (largest singular value).
template <int D>
inline double spectral_norm(const Mat<D>& a) {
    if constexpr (D == 1) return std::abs(a(0, 0));
    auto e = sym_eig<D>(transpose(a) * a);
    double lmax = std::max(e.eigenvalues[0], e.eigenvalues[D - 1]);
    return std::sqrt(std::max(0.0, lmax));
}

// Smallest singular value; used for ball-containment checks A(B_r) >= B_{s r}.
template <int D>
inline double min_singular_value(const Mat<D>& a) {
    if constexpr (D == 1) return std::abs(a(0, 0));
    auto e = sym_eig<D>(transpose(a) * a);
    double lmin = std::min(e.eigenvalues[0], e.eigenvalues[D - 1]);
    return std::sqrt(std::max(0.0, lmin));
}

// ---------------------------------------------------------------------------
// Deterministic reductions
// ---------------------------------------------------------------------------

// Fixed-order pairwise summation: identical input order gives bit-identical
// sums independent of threading or chunk decisions higher up.
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& x) {
    return pairwise_sum(x.data(), x.size());
}

// Accumulator that preserves insertion order and reduces pairwise.
class SumAccumulator {
  public:
    void add(double v) { terms_.push_back(v); }
    double total() const { return pairwise_sum(terms_); }
    std::size_t size() const { return terms_.size(); }

  private:
    std::vector<double> terms_;
};

// FNV-1a, used for config/fixture hashing (stability matters, crypto doesn't).
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 14695981039346656037ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace otlab
