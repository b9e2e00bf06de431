#pragma once

#include <stdexcept>
#include <string>

namespace ulab {

enum class ErrorKind {
    InputShape,
    Label,
    Dimension,
    Format,
    Config,
    Id,
    Io,
    Numeric,
    UndefinedTpr,
    InsufficientPopulation,
    Environment,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

} // namespace ulab
