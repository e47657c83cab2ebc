#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace polystyle {

enum class Errc {
    DimensionMismatch,
    ZeroNormVector,
    EmptyInput,
    NonFiniteValue,
    InsufficientData,
    DegenerateCovariance,
    MalformedLine,
    SchemaViolation,
    DuplicateId,
    MissingFile,
    ProviderUnavailable,
    AuthError,
    DimMismatch,
    MissingFixture,
    ConfigInvalid,
    NoSpeakerData,
    InconsistentInput,
    NoValidTriplets,
    TooFewPairs,
    InvalidMargin,
    EmptyDataset,
    DivergedLoss,
    EmptyNode,
    SingleClassInput,
    UnfittedModel,
    LengthMismatch,
    EmptyGroup,
    EmptyCandidates,
};

std::string_view errc_name(Errc code) noexcept;

/// Provider failures map to a distinct CLI exit code; everything else is a data error.
inline bool is_provider_error(Errc code) noexcept {
    return code == Errc::ProviderUnavailable || code == Errc::AuthError ||
           code == Errc::DimMismatch;
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), message_(what) {}

    Errc code() const noexcept { return code_; }
    /// what() without the code prefix.
    const std::string& message() const noexcept { return message_; }

private:
    Errc code_;
    std::string message_;
};

}  // namespace polystyle
