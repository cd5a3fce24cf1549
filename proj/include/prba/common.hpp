#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace prba {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kHalfPi = kPi / 2.0;

// Every error carries a short category so the CLI can print a categorized
// failure line.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}
    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define PRBA_DEFINE_ERROR(Name, tag)                                             \
    class Name : public Error {                                                  \
    public:                                                                      \
        explicit Name(const std::string& what) : Error(tag, what) {}             \
    };

PRBA_DEFINE_ERROR(InvalidArgument, "invalid-argument")
PRBA_DEFINE_ERROR(NumericFault, "numeric-fault")
PRBA_DEFINE_ERROR(DegenerateInput, "degenerate-input")
PRBA_DEFINE_ERROR(ContractViolation, "contract-violation")
PRBA_DEFINE_ERROR(IntegrityError, "integrity")
PRBA_DEFINE_ERROR(ParseError, "parse")
PRBA_DEFINE_ERROR(ValidationError, "validation")
PRBA_DEFINE_ERROR(UnsupportedVersion, "unsupported-version")
PRBA_DEFINE_ERROR(KindMismatch, "kind-mismatch")
PRBA_DEFINE_ERROR(IoError, "io")

#undef PRBA_DEFINE_ERROR

// Linear power to decibels.
inline double to_db(double linear) { return 10.0 * std::log10(linear); }

}  // namespace prba
