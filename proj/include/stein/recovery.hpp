#pragma once

#include <vector>

#include "stein/nuisance.hpp"
#include "stein/probes.hpp"
#include "stein/types.hpp"

namespace stein {

/// Keeps the s entries of largest absolute value (ties broken by lower
/// index) and zeroes the rest.
Vector hard_threshold(const Vector& u, Index s);

struct TpmResult {
  Vector v;               // unit norm, at most s nonzeros
  double lambda = 0.0;    // Rayleigh quotient v^T K v at the returned v
  int iterations = 0;
  bool converged = true;
};

/// Sparse leading eigenvector by power iteration interleaved with hard
/// thresholding, with a monotone |v^T K v| safeguard (a step that lowers
/// the Rayleigh quotient is halved toward the previous iterate, up to 20
/// backtracks).
TpmResult truncated_power_method(const Matrix& k, Index s, int max_iter = 500,
                                 double tol = 1e-7);

struct ProbeStrengthRow {
  std::string probe;
  double strength1 = 0.0;
  double strength2 = 0.0;
};

/// Final encoder direction: unit norm, sign fixed so the largest-magnitude
/// entry is positive; sparse (support recorded) in the high regime.
struct EncoderFit {
  Vector gamma;
  int order = 1;
  Probe probe;
  std::vector<Index> support;  // high regime only; empty means dense
  double strength = 0.0;
  Regime regime = Regime::Low;
  bool fallback_used = false;
  std::vector<ProbeStrengthRow> diagnostics;
};

/// Turns a raw direction into the final encoder direction. In the high
/// regime the order-1 path hard-thresholds u; the order-2 path runs the
/// truncated power method on k_matrix (the whitened second-order moment),
/// maps back through omega_sqrt and, when threshold_whitened is set,
/// re-thresholds to s in the original basis.
EncoderFit finalize(const Vector& u, Regime regime, Index s, int order,
                    const Matrix* k_matrix = nullptr,
                    const Matrix* omega_sqrt = nullptr,
                    bool threshold_whitened = true);

/// Flip v in place so its largest-magnitude entry (ties: lowest index) is
/// positive; returns the applied sign.
double fix_sign_convention(Vector& v);

}  // namespace stein
