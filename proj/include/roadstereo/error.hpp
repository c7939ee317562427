#pragma once

#include <stdexcept>
#include <string>

namespace roadstereo {

enum class ErrorCode {
    MissingFile,
    UnsupportedDepth,
    Truncated,
    WrongChannels,
    Overflow,
    Unwritable,
    SizeMismatch,
    InvalidArgument,
    InsufficientMatches,
    RankDeficient,
    WindowTooLarge,
    DegenerateBlock,
    OutOfBounds,
    NoSamples,
    BadScene,
    BadConfig,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::UnsupportedDepth: return "UnsupportedDepth";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::WrongChannels: return "WrongChannels";
    case ErrorCode::Overflow: return "Overflow";
    case ErrorCode::Unwritable: return "Unwritable";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientMatches: return "InsufficientMatches";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::DegenerateBlock: return "DegenerateBlock";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::NoSamples: return "NoSamples";
    case ErrorCode::BadScene: return "BadScene";
    case ErrorCode::BadConfig: return "BadConfig";
    }
    return "Unknown";
}

/// Exception type thrown by every module; `code()` identifies the failure class.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace roadstereo
