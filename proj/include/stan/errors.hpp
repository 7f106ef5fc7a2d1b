#pragma once
#include <stdexcept>
#include <string>

namespace stan {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ModeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ParseError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct SingularityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace stan
