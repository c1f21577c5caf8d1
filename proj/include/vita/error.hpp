#pragma once

#include <stdexcept>
#include <string>

namespace vita {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace vita
