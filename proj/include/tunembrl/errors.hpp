#pragma once

#include <stdexcept>
#include <string>

namespace tunembrl {

enum class ErrorCode {
    EmptyHistory,
    NumericalOverflow,
    CorruptCheckpoint,
    VersionMismatch,
    DimensionMismatch,
    NonFiniteLoss,
    NonFiniteInput,
    InvalidBudget,
    DegenerateVariance,
    EmptyArchive,
    InsufficientOverlap,
    EmptyLog,
    EmptyWindow,
    InvalidConfig,
    ResumeMismatch,
    WorkerCrash,
    IoError,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

}  // namespace tunembrl
