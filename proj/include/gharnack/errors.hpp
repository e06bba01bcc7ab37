#pragma once

#include <stdexcept>
#include <string>

namespace gharnack {

// Base for every error the library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A volatility control left the band [sigma_lower, sigma_upper].
class OutOfBandError : public Error {
public:
    using Error::Error;
};

// A state-feedback policy was asked to run without a state source.
class MissingStateSourceError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t position)
        : Error(what + " (at position " + std::to_string(position) + ")"),
          pos(position) {}
    std::size_t pos;
};

// Drift evaluation hit a singularity (division by zero, non-finite result)
// somewhere on the declared box.
class EvalError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

class CflViolationError : public Error {
public:
    CflViolationError(const std::string& what, double limit)
        : Error(what), dt_limit(limit) {}
    double dt_limit;
};

class OutOfDomainError : public Error {
public:
    using Error::Error;
};

// Lambda_1 collapsed: the momentum-to-position coupling is effectively zero,
// so no coupling schedule exists.
class DegenerateCouplingError : public Error {
public:
    using Error::Error;
};

// A Girsanov/Novikov exponent exceeded the representable range. Carries the
// offending exponent so harnesses can report the scale of the failure.
class OverflowDetectedError : public Error {
public:
    OverflowDetectedError(const std::string& what, double exp_value)
        : Error(what), exponent(exp_value) {}
    double exponent;
};

// The outer s-integrand keeps growing at the smallest s: the integral
// diverges at this resolution.
class QuadratureDivergenceError : public Error {
public:
    using Error::Error;
};

// Harnack-type checks need f >= 0.
class InvalidFError : public Error {
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

}  // namespace gharnack
