#pragma once

#include <stdexcept>
#include <string>

namespace qnc {

// Base for every error the library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define QNC_ERROR(Name)                                                  \
    class Name : public Error {                                          \
    public:                                                              \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

QNC_ERROR(OpenNetworkViolation);
QNC_ERROR(InvalidParameter);
QNC_ERROR(NonRegenerativeEpisode);
QNC_ERROR(InsufficientRegeneration);
QNC_ERROR(ModelRequired);
QNC_ERROR(DataCorruption);
QNC_ERROR(Divergence);
QNC_ERROR(ReducibleChain);
QNC_ERROR(HypothesisViolated);
QNC_ERROR(InvalidSojourn);
QNC_ERROR(TruncationTooSmall);
QNC_ERROR(ConfigError);

#undef QNC_ERROR

}  // namespace qnc
