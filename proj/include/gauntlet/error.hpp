#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace gauntlet {

// Every failure carries a stable machine-readable code ("malformed-diff",
// "script-exhausted", ...) next to the human-readable message. CLI and tests
// dispatch on the code, never on message text.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error("[" + code + "] " + message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

} // namespace gauntlet
