#include "vdt/error.hpp"

namespace vdt {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonPositiveTau: return "NonPositiveTau";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyRow: return "EmptyRow";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NoForwardTrace: return "NoForwardTrace";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::TooFewClasses: return "TooFewClasses";
    case ErrorCode::NegativeInput: return "NegativeInput";
    case ErrorCode::ClassCoverage: return "ClassCoverage";
    case ErrorCode::RaggedAttributeSchema: return "RaggedAttributeSchema";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::NoBraceBlock: return "NoBraceBlock";
    case ErrorCode::UnbalancedBraces: return "UnbalancedBraces";
    case ErrorCode::NonStringValue: return "NonStringValue";
    case ErrorCode::BadTemplate: return "BadTemplate";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

} // namespace vdt
