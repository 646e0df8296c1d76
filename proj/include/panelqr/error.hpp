#pragma once

#include <stdexcept>
#include <string>

namespace panelqr {

enum class ErrorKind {
    InvalidArgument,
    DimensionMismatch,
    DegenerateDesign,
    NotConverged,
    InsufficientReplicates,
    TooManyFailedReplicates,
    NonpositiveSE,
    NegativeDiagonal,
    SingularRestriction,
    ZeroKernelMass,
    SingularGamma,
    UnbalancedPanel,
    NonPositiveLog,
    DuplicateCell,
    ParseError,
    ZeroQuadraticTerm,
};

inline const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DegenerateDesign: return "DegenerateDesign";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::InsufficientReplicates: return "InsufficientReplicates";
    case ErrorKind::TooManyFailedReplicates: return "TooManyFailedReplicates";
    case ErrorKind::NonpositiveSE: return "NonpositiveSE";
    case ErrorKind::NegativeDiagonal: return "NegativeDiagonal";
    case ErrorKind::SingularRestriction: return "SingularRestriction";
    case ErrorKind::ZeroKernelMass: return "ZeroKernelMass";
    case ErrorKind::SingularGamma: return "SingularGamma";
    case ErrorKind::UnbalancedPanel: return "UnbalancedPanel";
    case ErrorKind::NonPositiveLog: return "NonPositiveLog";
    case ErrorKind::DuplicateCell: return "DuplicateCell";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ZeroQuadraticTerm: return "ZeroQuadraticTerm";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind;
/// what() is prefixed with the kind name.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    const char* name() const noexcept { return to_string(kind_); }

private:
    ErrorKind kind_;
};

} // namespace panelqr
