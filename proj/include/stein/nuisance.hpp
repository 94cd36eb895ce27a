#pragma once

#include <string>

#include "stein/types.hpp"

namespace stein {

enum class Regime { Low, High };

inline std::string regime_name(Regime r) {
  return r == Regime::Low ? "low" : "high";
}

struct LassoInfo {
  bool converged = true;
  int sweeps = 0;
};

struct GlassoInfo {
  bool converged = true;
  int sweeps = 0;
};

/// Conditional linear-Gaussian working model for the feature block given
/// the nuisance block: coefficient matrix, residual covariance and its
/// precision-side derivatives.
struct NuisanceFit {
  Matrix a_hat;       // q x p
  Matrix sigma_hat;   // q x q
  Matrix omega_hat;   // q x q, symmetric PD
  Matrix omega_sqrt;  // q x q, symmetric PSD square root of omega_hat
  Regime regime = Regime::Low;
  double lambda_a = 0.0;
  double rho_omega = 0.0;
  bool mean_converged = true;
  bool precision_converged = true;
};

/// Least squares of each z column on x. Requires n > p and a design that
/// stays below condition number 1e12 after a small ridge jitter.
Matrix fit_mean_ols(const Matrix& x, const Matrix& z);

/// Row-wise L1-penalized regression of z columns on x via cyclic
/// coordinate descent (objective 0.5*||z_j - X a||^2 / n + lambda*||a||_1).
Matrix fit_mean_lasso(const Matrix& x, const Matrix& z, double lambda,
                      LassoInfo* info = nullptr, int threads = 1);

/// (1/n) R^T R after centering columns of R by their means.
Matrix sample_covariance(const Matrix& resid);

/// L1-penalized precision estimate maximizing
/// log det(Omega) - tr(S Omega) - rho * ||Omega||_{1,off} via
/// block coordinate descent with per-column coordinate-descent solves.
Matrix graphical_lasso(const Matrix& s, double rho, GlassoInfo* info = nullptr);

/// Row i of the result is z_i - a_hat * x_i.
Matrix residualize(const Matrix& z, const Matrix& x, const Matrix& a_hat);

/// Symmetric PSD square root with eigenvalues clipped to a 1e-8 floor.
Matrix psd_sqrt(const Matrix& omega);

/// Inverse with ridge jitter 1e-8 * trace(S)/q on the diagonal.
Matrix jittered_inverse(const Matrix& s);

/// One-call fit of the full working model. Low regime: OLS, sample
/// covariance, direct (jittered) inverse. High regime: coordinate-descent
/// lasso rows with lambda = c_a*sqrt(log(max(p,q))/n) and graphical lasso
/// with rho = c_omega*sqrt(log(q)/n).
NuisanceFit fit_nuisance(const Matrix& x, const Matrix& z, Regime regime,
                         double c_a = 0.5, double c_omega = 0.5,
                         int threads = 1);

}  // namespace stein
