#pragma once

#include <complex>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

#include <Eigen/Dense>

namespace pagelab {

using cplx = std::complex<double>;
using index_t = std::uint64_t;

using RealVector = Eigen::VectorXd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::MatrixXcd;

inline constexpr cplx I{0.0, 1.0};

enum class ErrorCode {
    invalid_size,
    invalid_argument,
    dimension_mismatch,
    convergence,
    degeneracy,
    step_too_large,
    integration,
    not_converged,
    numerical,
    config,
    io,
};

inline const char* to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::invalid_size: return "invalid-size";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::convergence: return "convergence";
    case ErrorCode::degeneracy: return "degeneracy";
    case ErrorCode::step_too_large: return "step-too-large";
    case ErrorCode::integration: return "integration";
    case ErrorCode::not_converged: return "not-converged";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
    }
    return "unknown";
}

/// Every failure raised by the library carries one of the codes above.
/// `value` holds the diagnostic number when one exists (a residual, a gap,
/// a minimum eigenvalue).
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what, double value = 0.0)
        : std::runtime_error(std::string(to_string(code)) + ": " + what)
        , code_(code)
        , value_(value)
    {
    }

    ErrorCode code() const noexcept { return code_; }
    double value() const noexcept { return value_; }

private:
    ErrorCode code_;
    double value_;
};

inline void require(bool cond, ErrorCode code, const std::string& what, double value = 0.0)
{
    if (!cond)
        throw Error(code, what, value);
}

inline bool is_power_of_two(index_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline int log2_exact(index_t n)
{
    require(is_power_of_two(n), ErrorCode::invalid_size, "dimension is not a power of two");
    int l = 0;
    while ((index_t{1} << l) < n)
        ++l;
    return l;
}

inline int parity(index_t bits) { return __builtin_popcountll(bits) & 1; }

/// Internal parallelism cap, read from PAGELAB_THREADS (default: hardware).
inline unsigned thread_budget()
{
    if (const char* env = std::getenv("PAGELAB_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1)
            return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

} // namespace pagelab
