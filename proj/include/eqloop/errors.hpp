#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace eqloop {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Closed set of reasons a proposed candidate can be turned away. The string
/// forms are stable: they appear in prompts, run logs and replay files.
enum class RejectReason {
    Syntax,
    DisallowedSymbol,
    Linearity,
    TooManyTerms,
    Duplicate,
    FitFailure,
    RolloutDivergence,
};

inline std::string_view to_string(RejectReason r) {
    switch (r) {
    case RejectReason::Syntax: return "syntax";
    case RejectReason::DisallowedSymbol: return "disallowed symbol";
    case RejectReason::Linearity: return "linearity";
    case RejectReason::TooManyTerms: return "too-many-terms";
    case RejectReason::Duplicate: return "duplicate";
    case RejectReason::FitFailure: return "fit-failure";
    case RejectReason::RolloutDivergence: return "rollout-divergence";
    }
    return "unknown";
}

enum class ParseErrorKind { Syntax, DisallowedSymbol, DisallowedForm };

class ParseError : public Error {
public:
    ParseError(ParseErrorKind kind, const std::string& what, std::size_t position)
        : Error(what), kind_(kind), position_(position) {}

    ParseErrorKind kind() const noexcept { return kind_; }
    std::size_t position() const noexcept { return position_; }

    RejectReason reason() const noexcept {
        switch (kind_) {
        case ParseErrorKind::Syntax: return RejectReason::Syntax;
        case ParseErrorKind::DisallowedSymbol: return RejectReason::DisallowedSymbol;
        case ParseErrorKind::DisallowedForm: return RejectReason::Linearity;
        }
        return RejectReason::Syntax;
    }

private:
    ParseErrorKind kind_;
    std::size_t position_;
};

/// A template document that cannot be turned into a usable EquationTemplate.
class TemplateError : public Error {
public:
    TemplateError(RejectReason reason, const std::string& what) : Error(what), reason_(reason) {}
    RejectReason reason() const noexcept { return reason_; }

private:
    RejectReason reason_;
};

class EvaluationError : public Error {
public:
    EvaluationError(const std::string& what, std::size_t sample, std::size_t state, std::size_t feature)
        : Error(what), sample_(sample), state_(state), feature_(feature) {}

    std::size_t sample() const noexcept { return sample_; }
    std::size_t state() const noexcept { return state_; }
    std::size_t feature() const noexcept { return feature_; }

private:
    std::size_t sample_;
    std::size_t state_;
    std::size_t feature_;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// Data that carries no information for the requested statistic
/// (constant series, zero range, zero variance).
class DegenerateData : public Error {
public:
    using Error::Error;
};

class InvalidTrajectory : public Error {
public:
    using Error::Error;
};

class ProposerUnavailable : public Error {
public:
    using Error::Error;
};

class MalformedResponse : public Error {
public:
    using Error::Error;
};

class SpecError : public Error {
public:
    using Error::Error;
};

class TruthDivergence : public Error {
public:
    using Error::Error;
};

class UnstableConfiguration : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace eqloop
