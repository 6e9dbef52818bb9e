#pragma once

#include <stdexcept>
#include <string>

namespace isp {

/// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or parameter value.
class ParameterError : public Error {
public:
  using Error::Error;
};

class OutOfDomainError : public Error {
public:
  using Error::Error;
};

/// Inconsistent setup, e.g. a grasp target placed on a fixed node.
class ConfigurationError : public Error {
public:
  using Error::Error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class NumericalError : public Error {
public:
  using Error::Error;
};

class ResetFailure : public Error {
public:
  using Error::Error;
};

class DegenerateEpisode : public Error {
public:
  using Error::Error;
};

}  // namespace isp
