#pragma once

#include <stdexcept>
#include <string>

namespace apr {

enum class ErrorKind {
    Dimension,
    Numeric,
    Contract,
    Config,
    Decode,
    Stats,
    Io,
};

// Every module reports failures through this one exception type; the C API
// maps `kind()` onto its status codes.
class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &what) { throw Error(kind, what); }

inline void require(bool ok, ErrorKind kind, const std::string &what) {
    if (!ok) fail(kind, what);
}

const char *error_kind_name(ErrorKind kind) noexcept;

}  // namespace apr
