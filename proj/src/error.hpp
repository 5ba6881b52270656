#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace msd {

// Mirrors the CLI exit-code convention: 2 validation, 3 I/O, 4 numerics.
enum class ErrorCode : int {
    validation = 2,
    io = 3,
    numeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    int exit_code() const noexcept { return static_cast<int>(code_); }

private:
    ErrorCode code_;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(ErrorCode code, const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    throw Error(code, os.str());
}

template <typename... Args>
void require(bool cond, ErrorCode code, const Args&... args) {
    if (!cond) fail(code, args...);
}

}  // namespace msd
