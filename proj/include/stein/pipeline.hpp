#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stein/data.hpp"
#include "stein/moments.hpp"
#include "stein/nuisance.hpp"
#include "stein/recovery.hpp"
#include "stein/types.hpp"

namespace stein {

enum class RegimeChoice { Auto, Low, High };
enum class TauMode { Permutation, Fixed };

/// Resampling scheme behind the calibrated thresholds. Permutation
/// shuffles rows (exact under independence, but blind to the |t|-to-row
/// pairing that inflates first-order strengths under even links);
/// SignFlip draws Rademacher signs for the centered probe values
/// (preserves that pairing, but symmetrizes skewed probe values);
/// Combined takes the larger threshold of the two and is conservative
/// under both mechanisms.
enum class NullScheme { Combined, SignFlip, Permutation };

struct PipelineConfig {
  RegimeChoice regime = RegimeChoice::Auto;
  Index s = 0;  // 0 = default rule min(q, max(20, ceil(sqrt(q))))
  std::vector<double> probe_scales = default_probe_scales();
  TauMode tau_mode = TauMode::Permutation;
  NullScheme null_scheme = NullScheme::Combined;
  double tau1 = 0.0;  // fixed mode only
  double tau2 = 0.0;  // fixed mode only
  int permutations = 50;
  double c_a = 0.5;
  double c_omega = 0.5;
  std::uint64_t seed = 0;
  int threads = 1;
  bool threshold_whitened = true;

  void validate() const;
  std::string to_json() const;
  static PipelineConfig from_json(const std::string& text);
};

struct StrengthRow {
  std::string probe;
  double strength1 = 0.0;
  double strength2 = 0.0;
  bool accepted1 = false;
  bool accepted2 = false;
};

struct NuisanceSummary {
  Regime regime = Regime::Low;
  double lambda_a = 0.0;
  double rho_omega = 0.0;
  bool mean_converged = true;
  bool precision_converged = true;
};

struct FitReport {
  EncoderFit fit;
  NuisanceSummary nuisance;
  Index n = 0, p = 0, q = 0;
  std::vector<StrengthRow> strengths;
  double tau1 = 0.0;
  double tau2 = 0.0;
  TauMode tau_mode = TauMode::Permutation;
  double timing_seconds = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> notes;

  std::string to_json() const;
  static FitReport from_json(const std::string& text);
};

/// End-to-end fit: nuisance removal, threshold calibration, sequential
/// probe/order scan with fallback, sparse/dense recovery.
FitReport fit(const Dataset& d, const PipelineConfig& cfg);

/// Resampling-null thresholds: for each order, the 95th percentile over
/// B draws of the per-draw maximum strength across probes. Deterministic
/// given seed.
std::pair<double, double> calibrate_thresholds(
    const std::vector<Vector>& tvals_by_probe, const Matrix& zres,
    const NuisanceFit& nf, int B, std::uint64_t seed, int threads = 1,
    NullScheme scheme = NullScheme::Combined);

/// Per-row index t_i = gamma^T z_i.
Vector encode(const EncoderFit& fit, const Matrix& z);

struct SignAlignment {
  int l = 1;               // sign of <gamma_hat, gamma_true>, +1 on ties
  double err = 0.0;        // ||gamma_hat - l*gamma_true||_2
  double angle_deg = 0.0;  // arccos(|<gamma_hat, gamma_true>|) in degrees
  double proj_loss = 0.0;  // 1 - |<gamma_hat, gamma_true>|
};

SignAlignment align_sign(const Vector& gamma_hat, const Vector& gamma_true);

}  // namespace stein
