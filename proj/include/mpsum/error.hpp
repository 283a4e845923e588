#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mpsum {

enum class ErrorCode {
    InvalidMatrix,
    NoConvergence,
    DomainError,
    EmptyCorpus,
    InvalidSize,
    UnstableA,
    ShapeError,
    InternalError,
    NoTrainableParams,
    OutOfBall,
    DegenerateInput,
    InvalidK,
    BatchTooSmall,
    InvalidLabel,
    InvalidStep,
    DegenerateLabels,
    ParseError,
    DuplicateId,
    NoGold,
    EmptyReview,
    ParaphraseError,
    ProtocolError,
    FormatError,
    ConfigError,
    IoError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidMatrix: return "InvalidMatrix";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::DomainError: return "DomainError";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::InvalidSize: return "InvalidSize";
        case ErrorCode::UnstableA: return "UnstableA";
        case ErrorCode::ShapeError: return "ShapeError";
        case ErrorCode::InternalError: return "InternalError";
        case ErrorCode::NoTrainableParams: return "NoTrainableParams";
        case ErrorCode::OutOfBall: return "OutOfBall";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::InvalidK: return "InvalidK";
        case ErrorCode::BatchTooSmall: return "BatchTooSmall";
        case ErrorCode::InvalidLabel: return "InvalidLabel";
        case ErrorCode::InvalidStep: return "InvalidStep";
        case ErrorCode::DegenerateLabels: return "DegenerateLabels";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::NoGold: return "NoGold";
        case ErrorCode::EmptyReview: return "EmptyReview";
        case ErrorCode::ParaphraseError: return "ParaphraseError";
        case ErrorCode::ProtocolError: return "ProtocolError";
        case ErrorCode::FormatError: return "FormatError";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto a stable exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace mpsum
