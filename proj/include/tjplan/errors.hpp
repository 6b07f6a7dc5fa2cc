#pragma once

#include <stdexcept>
#include <string>

namespace tjplan {

/// Argument outside the domain of a function (e.g. t outside [0, T]).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid or inconsistent parameter (lengths, ranges, empty inputs).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class DegenerateTrajectory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf produced inside a numerical routine.
class NumericalBreakdown : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A user callback threw while the solver was running.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InfeasiblePath : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PlanningFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedLength : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedConfig : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset/record validation failure; the message names the record index.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tjplan
