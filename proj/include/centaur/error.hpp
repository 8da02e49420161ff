#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace centaur {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or option values (bad caps, wrong technique fields, unknown keys).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, std::string key = {})
        : Error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class DimensionError : public Error {
public:
    DimensionError(const std::string& context, std::size_t expected, std::size_t got)
        : Error(context + ": expected dimension " + std::to_string(expected) + ", got " +
                std::to_string(got)) {}
    using Error::Error;
};

class DivergenceError : public Error {
public:
    explicit DivergenceError(std::size_t iteration)
        : Error("non-finite objective or gradient at iteration " + std::to_string(iteration)),
          iteration_(iteration) {}
    explicit DivergenceError(const std::string& what) : Error(what), iteration_(0) {}
    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

class ProjectionError : public Error {
public:
    using Error::Error;
};

/// p_i > 0 where q_i == 0.
class SupportError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class EmptyDataError : public Error {
public:
    using Error::Error;
};

/// A technique was asked to run without the human signal it needs.
class CoverageError : public Error {
public:
    using Error::Error;
};

class InvariantError : public Error {
public:
    using Error::Error;
};

}  // namespace centaur
