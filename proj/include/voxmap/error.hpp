#pragma once

#include <stdexcept>
#include <string>

namespace voxmap {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid or missing configuration, required masks, manifest columns, ...
class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class EmptyRegionError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace voxmap
