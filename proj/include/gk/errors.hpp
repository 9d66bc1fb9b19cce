#pragma once

#include <stdexcept>
#include <string>

namespace gk {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad files, bad arguments, inconsistent shapes. CLI exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

// Anything the numerics refuse to do. CLI exit code 3.
class NumericalError : public Error {
public:
    using Error::Error;
};

#define GK_NUMERICAL_ERROR(Name)                          \
    class Name : public NumericalError {                  \
    public:                                               \
        explicit Name(const std::string& what)            \
            : NumericalError(#Name ": " + what) {}        \
    };

GK_NUMERICAL_ERROR(NotPositiveDefinite)
GK_NUMERICAL_ERROR(DowndateBreaksPositivity)
GK_NUMERICAL_ERROR(DegenerateData)
GK_NUMERICAL_ERROR(SingularState)
GK_NUMERICAL_ERROR(FactorizationDrift)
GK_NUMERICAL_ERROR(InfeasibleS)
GK_NUMERICAL_ERROR(NoConvergence)
GK_NUMERICAL_ERROR(AllZeroPaths)

#undef GK_NUMERICAL_ERROR

}  // namespace gk
