#pragma once

#include <stdexcept>
#include <string>

namespace sparsa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Cholesky pivot fell below the scale-relative tolerance.
class NotPositiveDefinite : public Error {
public:
  using Error::Error;
};

/// A class has fewer than two samples, so the pooled covariance is undefined.
class DegenerateClass : public Error {
public:
  using Error::Error;
};

class ZeroVariance : public Error {
public:
  using Error::Error;
};

/// The direction w of a linear rule has w'Σw == 0.
class ZeroDirection : public Error {
public:
  using Error::Error;
};

class TooFewSamples : public Error {
public:
  using Error::Error;
};

/// Every (lambda, p0) cell of a cross-validation grid failed.
class CvFailed : public Error {
public:
  using Error::Error;
};

class InvalidSpec : public Error {
public:
  using Error::Error;
};

/// The l1 program could not be solved (empty constraint set or no convergence).
class SolverFailure : public Error {
public:
  using Error::Error;
};

/// Malformed input: CSV rows, model files, argument contracts.
class InvalidInput : public Error {
public:
  using Error::Error;
};

} // namespace sparsa
