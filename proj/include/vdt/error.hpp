#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vdt {

enum class ErrorCode {
    ZeroRow,
    DimMismatch,
    NonPositiveTau,
    NonFinite,
    EmptyRow,
    EmptyInput,
    LabelOutOfRange,
    InvalidArgument,
    NoForwardTrace,
    EmptyClass,
    NonFiniteLoss,
    TooFewClasses,
    NegativeInput,
    ClassCoverage,
    RaggedAttributeSchema,
    HttpError,
    EmptyResponse,
    RateLimited,
    MalformedResponse,
    NoBraceBlock,
    UnbalancedBraces,
    NonStringValue,
    BadTemplate,
    BadMagic,
    UnsupportedVersion,
    TruncatedPayload,
    UnsupportedDtype,
    MissingFile,
    IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so the
// CLI can emit structured error JSON without string matching.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    [[nodiscard]] const std::string& message() const noexcept { return message_; }

  private:
    ErrorCode code_;
    std::string message_;
};

} // namespace vdt
