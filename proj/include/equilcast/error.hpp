#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace equilcast {

/// Domain failure categories. The CLI prints the name verbatim so scripts can
/// match on it.
enum class ErrorKind {
    GridMismatch,
    CalibrationDegenerate,
    NoFringePeak,
    WindowOutOfRange,
    DegenerateBaseline,
    PoreBlocked,
    SolverDiverged,
    DegenerateFit,
    InvalidArgument,
    InsufficientFits,
    DistributionInfeasible,
    AmbiguousSnr,
    NoDiscriminant,
    NonFiniteInput,
    TrainingDiverged,
    EnsembleDiverged,
    ShapeMismatch,
    NotSettled,
    Undefined,
    EmptyCorpus,
    DegenerateRange,
    MissingCurveFile,
    DuplicateId,
    ParseError,
    IoError,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::GridMismatch: return "GridMismatch";
        case ErrorKind::CalibrationDegenerate: return "CalibrationDegenerate";
        case ErrorKind::NoFringePeak: return "NoFringePeak";
        case ErrorKind::WindowOutOfRange: return "WindowOutOfRange";
        case ErrorKind::DegenerateBaseline: return "DegenerateBaseline";
        case ErrorKind::PoreBlocked: return "PoreBlocked";
        case ErrorKind::SolverDiverged: return "SolverDiverged";
        case ErrorKind::DegenerateFit: return "DegenerateFit";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::InsufficientFits: return "InsufficientFits";
        case ErrorKind::DistributionInfeasible: return "DistributionInfeasible";
        case ErrorKind::AmbiguousSnr: return "AmbiguousSnr";
        case ErrorKind::NoDiscriminant: return "NoDiscriminant";
        case ErrorKind::NonFiniteInput: return "NonFiniteInput";
        case ErrorKind::TrainingDiverged: return "TrainingDiverged";
        case ErrorKind::EnsembleDiverged: return "EnsembleDiverged";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::NotSettled: return "NotSettled";
        case ErrorKind::Undefined: return "Undefined";
        case ErrorKind::EmptyCorpus: return "EmptyCorpus";
        case ErrorKind::DegenerateRange: return "DegenerateRange";
        case ErrorKind::MissingCurveFile: return "MissingCurveFile";
        case ErrorKind::DuplicateId: return "DuplicateId";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

}  // namespace equilcast
