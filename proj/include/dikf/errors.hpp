#pragma once

#include <stdexcept>
#include <string>

namespace dikf {

// Bad arguments and dimension mismatches surface as std::invalid_argument.

/// Coincident points or collinear bond vectors at the linearization point.
class SingularGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The innovation variance H C H^T + v went non-positive, or a covariance
/// block lost positive semidefiniteness.
class NumericalBreakdown : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dikf
