#pragma once

#include <stdexcept>
#include <string>

namespace subevo {

/// Precondition violated by the caller (bad response, out-of-range probability, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative routine failed to converge where convergence is expected.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The asymptotic system has no solution in the requested regime
/// (for logistic regression: the MLE does not exist).
class RegimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finite-sample logistic MLE diverged (data are separable).
class SeparationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The weighted Gram matrix sum_l x_l l''_l x_l^T could not be factorized.
class SingularCurvatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace subevo
