#pragma once

#include <stdexcept>
#include <string>

namespace dbsa {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class MaskError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class CompatibilityError : public Error {
public:
    using Error::Error;
};

// Bad user input: malformed dataset lines, missing files, invalid flags.
class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace dbsa
