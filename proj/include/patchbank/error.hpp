#pragma once

#include <stdexcept>
#include <string>

namespace patchbank {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent file contents (tensor files, manifests, bank sidecars).
class FormatError : public Error {
public:
    using Error::Error;
};

// Arrays whose shapes do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid user-supplied parameter (kernel size, threshold, ratio, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace patchbank
