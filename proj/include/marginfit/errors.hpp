#pragma once

#include <stdexcept>
#include <string>

namespace marginfit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed arguments, schemas, specs or data.
struct InputError : Error {
    using Error::Error;
};

// A parameterization that is not complete (or not hierarchical) cannot be fitted.
struct IncompleteSpecError : InputError {
    using InputError::InputError;
};

// K or X supplied with fewer independent columns than declared.
struct RankDeficientError : InputError {
    using InputError::InputError;
};

// A matrix that must be inverted is (numerically) singular.
struct SingularError : Error {
    using Error::Error;
};

// Marginal probabilities below the floor; diag(M pi)^-1 is not trustworthy.
struct ConditioningError : Error {
    using Error::Error;
};

// Fitted probabilities drifted to the boundary of the simplex.
struct BoundaryError : Error {
    using Error::Error;
};

}  // namespace marginfit
