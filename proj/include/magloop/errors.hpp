#pragma once

#include <stdexcept>
#include <string>

namespace magloop {

struct EvaluationAtPole : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegreeOverflow : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnstablePlant : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ZeroOnImaginaryAxis : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ImproperQ : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnstableClosedLoop : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoCrossover : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnstableDiscretization : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct WindowTooLong : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonlinearRegime : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IllConditioned : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GridMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace magloop
