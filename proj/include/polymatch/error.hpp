#pragma once

#include <stdexcept>
#include <string>

namespace polymatch {

// Base class for every error the library reports. Callers that only care
// about "did the run fail" can catch this; modules derive narrower types
// where the caller needs extra payload.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace polymatch
