#pragma once

#include <stdexcept>
#include <string>

namespace crowdfair {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad configuration or bad arguments detected before any computation starts.
class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& what) : Error(what) {}
};

// Malformed or inconsistent input data (CSV rows, id spaces, label domains).
class IngestError : public Error {
public:
  explicit IngestError(const std::string& what) : Error(what) {}
};

// A well-formed request that cannot be answered (empty intersection,
// missing ground truth, degenerate training set).
class ComputeError : public Error {
public:
  explicit ComputeError(const std::string& what) : Error(what) {}
};

// Filesystem-level failure (unreadable or unwritable path).
class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace crowdfair
