#pragma once

#include "stein/probes.hpp"
#include "stein/types.hpp"

namespace stein {

/// One (order, probe) attempt: raw direction u and its signal strength
/// (vector norm for order 1, |leading eigenvalue| for order 2).
struct SteinCandidate {
  int order = 1;  // 1 or 2
  Probe probe;
  Vector u;
  double lambda = 0.0;  // signed leading eigenvalue, order 2 only
  double strength = 0.0;
  int eigen_iterations = 0;
};

/// First-order whitened moment: omega * (1/n) * sum_i tvals_i * zres_i.
Vector first_order_vector(const Vector& tvals, const Matrix& zres,
                          const Matrix& omega);

/// Second-order whitened moment
///   omega_sqrt * [ (1/n) sum_i tvals_i (zres_i zres_i^T - sigma) ] * omega_sqrt,
/// symmetrized as (K + K^T)/2.
Matrix second_order_matrix(const Vector& tvals, const Matrix& zres,
                           const Matrix& sigma, const Matrix& omega_sqrt);

struct EigenPair {
  double lambda = 0.0;  // eigenvalue of largest absolute value
  Vector v;             // unit eigenvector, largest-magnitude entry positive
  int iterations = 0;
};

/// Leading-|lambda| eigenpair of a symmetric matrix by power iteration on
/// K^2 (so a dominant negative eigenvalue is found too), with the sign of
/// lambda resolved through the Rayleigh quotient v^T K v. Deterministic
/// start along the largest diagonal coordinate of K^2.
EigenPair leading_eigenpair(const Matrix& k);

double candidate_strength(const SteinCandidate& c);

}  // namespace stein
