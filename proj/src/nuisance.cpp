#include "stein/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stein/parallel.hpp"

namespace stein {

namespace {

double soft_threshold(double x, double lambda) {
  if (x > lambda) return x - lambda;
  if (x < -lambda) return x + lambda;
  return 0.0;
}

}  // namespace

Matrix fit_mean_ols(const Matrix& x, const Matrix& z) {
  const Index n = x.rows(), p = x.cols(), q = z.cols();
  if (z.rows() != n) throw std::invalid_argument("fit_mean_ols: row mismatch");
  if (p == 0) return Matrix::Zero(q, 0);
  if (n <= p) throw std::invalid_argument("fit_mean_ols: need n > p");

  Matrix xtx = x.transpose() * x;
  xtx = 0.5 * (xtx + xtx.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(xtx, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  // Jitter small enough that a rank-deficient design still fails the
  // condition check below.
  const double jitter = 1e-13 * std::max(lmax, 1e-300);
  xtx.diagonal().array() += jitter;
  const double lmin = es.eigenvalues().minCoeff() + jitter;
  if (!(lmin > 0.0) || (lmax + jitter) / lmin >= 1e12)
    throw std::runtime_error("fit_mean_ols: singular design after jitter");

  const Matrix xtz = x.transpose() * z;  // p x q
  return xtx.ldlt().solve(xtz).transpose();
}

Matrix fit_mean_lasso(const Matrix& x, const Matrix& z, double lambda,
                      LassoInfo* info, int threads) {
  const Index n = x.rows(), p = x.cols(), q = z.cols();
  if (z.rows() != n) throw std::invalid_argument("fit_mean_lasso: row mismatch");
  if (lambda < 0.0) throw std::invalid_argument("fit_mean_lasso: lambda < 0");
  if (p == 0) {
    if (info) *info = {true, 0};
    return Matrix::Zero(q, 0);
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  Vector col_scale(p);  // (1/n) ||x_k||^2
  for (Index k = 0; k < p; ++k) col_scale[k] = x.col(k).squaredNorm() * inv_n;

  constexpr double kTol = 1e-7;
  constexpr int kMaxSweeps = 10000;

  Matrix a = Matrix::Zero(q, p);
  std::vector<int> sweeps(static_cast<std::size_t>(q), 0);
  std::vector<char> conv(static_cast<std::size_t>(q), 1);

  parallel_for(q, threads, [&](Index j) {
    Vector coef = Vector::Zero(p);
    Vector resid = z.col(j);
    int sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
      double max_change = 0.0;
      for (Index k = 0; k < p; ++k) {
        if (col_scale[k] <= 0.0) continue;
        const double old = coef[k];
        const double rho = x.col(k).dot(resid) * inv_n + col_scale[k] * old;
        const double next = soft_threshold(rho, lambda) / col_scale[k];
        if (next != old) {
          resid.noalias() -= x.col(k) * (next - old);
          coef[k] = next;
          max_change = std::max(max_change, std::abs(next - old));
        }
      }
      if (max_change < kTol) break;
    }
    conv[static_cast<std::size_t>(j)] = sweep < kMaxSweeps ? 1 : 0;
    sweeps[static_cast<std::size_t>(j)] = std::min(sweep + 1, kMaxSweeps);
    a.row(j) = coef.transpose();
  });

  if (info) {
    info->converged =
        std::all_of(conv.begin(), conv.end(), [](char c) { return c != 0; });
    info->sweeps = *std::max_element(sweeps.begin(), sweeps.end());
  }
  return a;
}

Matrix sample_covariance(const Matrix& resid) {
  const Index n = resid.rows();
  if (n < 2) throw std::invalid_argument("sample_covariance: need n >= 2");
  const Matrix centered = resid.rowwise() - resid.colwise().mean();
  Matrix s = (centered.transpose() * centered) / static_cast<double>(n);
  return 0.5 * (s + s.transpose());
}

Matrix graphical_lasso(const Matrix& s, double rho, GlassoInfo* info) {
  const Index q = s.rows();
  if (s.cols() != q) throw std::invalid_argument("graphical_lasso: not square");
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument("graphical_lasso: input not symmetric");
  if (rho < 0.0) throw std::invalid_argument("graphical_lasso: rho < 0");
  {
    Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-8 * scale)
      throw std::invalid_argument("graphical_lasso: input not PSD");
  }
  if (q == 1) {
    Matrix omega(1, 1);
    const double v = s(0, 0);
    if (!(v > 0.0))
      throw std::runtime_error("graphical_lasso: zero variance input");
    omega(0, 0) = 1.0 / v;
    if (info) *info = {true, 0};
    return omega;
  }

  constexpr double kOuterTol = 1e-5;
  constexpr int kMaxOuter = 200;
  constexpr double kInnerTol = 1e-8;
  constexpr int kMaxInner = 1000;

  // Off-diagonal-only penalty: the stationarity condition pins the
  // working covariance diagonal at the input diagonal.
  Matrix w = s;
  Matrix beta = Matrix::Zero(q, q);  // column j holds the q-1 coefficients

  // One block update of column j against the current w; returns the
  // coordinate-descent solution of the penalized quadratic subproblem.
  auto solve_column = [&](Index j, Matrix& w_io) {
    Matrix w11(q - 1, q - 1);
    Vector s12(q - 1);
    Index r = 0;
    for (Index a = 0; a < q; ++a) {
      if (a == j) continue;
      s12[r] = s(a, j);
      Index c = 0;
      for (Index b = 0; b < q; ++b) {
        if (b == j) continue;
        w11(r, c) = w_io(a, b);
        ++c;
      }
      ++r;
    }
    Vector coef(q - 1);
    r = 0;
    for (Index a = 0; a < q; ++a) {
      if (a == j) continue;
      coef[r++] = beta(a, j);
    }
    Vector grad = w11 * coef;  // running W11 * beta
    for (int it = 0; it < kMaxInner; ++it) {
      double max_change = 0.0;
      for (Index k = 0; k < q - 1; ++k) {
        const double denom = w11(k, k);
        if (!(denom > 0.0)) continue;
        const double old = coef[k];
        const double u = s12[k] - (grad[k] - denom * old);
        const double next = soft_threshold(u, rho) / denom;
        if (next != old) {
          grad.noalias() += w11.col(k) * (next - old);
          coef[k] = next;
          max_change = std::max(max_change, std::abs(next - old));
        }
      }
      if (max_change < kInnerTol) break;
    }
    const Vector w12 = w11 * coef;
    r = 0;
    for (Index a = 0; a < q; ++a) {
      if (a == j) continue;
      w_io(a, j) = w12[r];
      w_io(j, a) = w12[r];
      beta(a, j) = coef[r];
      ++r;
    }
  };

  int sweep = 0;
  bool converged = false;
  for (; sweep < kMaxOuter; ++sweep) {
    const Matrix w_prev = w;
    for (Index j = 0; j < q; ++j) solve_column(j, w);
    if ((w - w_prev).cwiseAbs().maxCoeff() < kOuterTol) {
      converged = true;
      ++sweep;
      break;
    }
  }
  if (info) {
    info->converged = converged;
    info->sweeps = sweep;
  }

  // Recover the precision matrix from the final (w, beta) blocks.
  Matrix omega(q, q);
  for (Index j = 0; j < q; ++j) {
    double cross = 0.0;
    Index r = 0;
    for (Index a = 0; a < q; ++a) {
      if (a == j) continue;
      cross += w(a, j) * beta(a, j);
      ++r;
    }
    const double denom = w(j, j) - cross;
    if (!(denom > 0.0))
      throw std::runtime_error("graphical_lasso: lost positive definiteness");
    const double o22 = 1.0 / denom;
    omega(j, j) = o22;
    for (Index a = 0; a < q; ++a) {
      if (a == j) continue;
      omega(a, j) = -beta(a, j) * o22;
    }
  }
  omega = 0.5 * (omega + omega.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> es(omega, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0)
    omega.diagonal().array() += 1e-8 - es.eigenvalues().minCoeff();
  return omega;
}

Matrix residualize(const Matrix& z, const Matrix& x, const Matrix& a_hat) {
  if (z.rows() != x.rows() || a_hat.rows() != z.cols() ||
      a_hat.cols() != x.cols())
    throw std::invalid_argument("residualize: shape mismatch");
  if (x.cols() == 0) return z;
  return z - x * a_hat.transpose();
}

Matrix psd_sqrt(const Matrix& omega) {
  const Index q = omega.rows();
  if (omega.cols() != q) throw std::invalid_argument("psd_sqrt: not square");
  const Matrix sym = 0.5 * (omega + omega.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("psd_sqrt: eigendecomposition failed");
  Vector vals = es.eigenvalues();
  const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
  if (vals.minCoeff() < -1e-10 * scale)
    throw std::runtime_error("psd_sqrt: strongly indefinite input");
  for (Index i = 0; i < q; ++i) vals[i] = std::sqrt(std::max(vals[i], 1e-8));
  Matrix root = es.eigenvectors() * vals.asDiagonal() *
                es.eigenvectors().transpose();
  return 0.5 * (root + root.transpose());
}

Matrix jittered_inverse(const Matrix& s) {
  const Index q = s.rows();
  Matrix work = 0.5 * (s + s.transpose());
  work.diagonal().array() += 1e-8 * work.trace() / static_cast<double>(q);
  Eigen::LDLT<Matrix> ldlt(work);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("jittered_inverse: decomposition failed");
  Matrix inv = ldlt.solve(Matrix::Identity(q, q));
  return 0.5 * (inv + inv.transpose());
}

NuisanceFit fit_nuisance(const Matrix& x, const Matrix& z, Regime regime,
                         double c_a, double c_omega, int threads) {
  const Index n = z.rows(), p = x.cols(), q = z.cols();
  NuisanceFit fit;
  fit.regime = regime;

  if (regime == Regime::Low) {
    fit.a_hat = p > 0 ? fit_mean_ols(x, z) : Matrix::Zero(q, 0);
    const Matrix resid = residualize(z, x, fit.a_hat);
    fit.sigma_hat = sample_covariance(resid);
    fit.omega_hat = jittered_inverse(fit.sigma_hat);
  } else {
    if (p > 0) {
      fit.lambda_a =
          c_a * std::sqrt(std::log(static_cast<double>(std::max(p, q))) /
                          static_cast<double>(n));
      LassoInfo li;
      fit.a_hat = fit_mean_lasso(x, z, fit.lambda_a, &li, threads);
      fit.mean_converged = li.converged;
    } else {
      fit.a_hat = Matrix::Zero(q, 0);
    }
    const Matrix resid = residualize(z, x, fit.a_hat);
    fit.sigma_hat = sample_covariance(resid);
    fit.rho_omega = c_omega * std::sqrt(std::log(static_cast<double>(q)) /
                                        static_cast<double>(n));
    GlassoInfo gi;
    fit.omega_hat = graphical_lasso(fit.sigma_hat, fit.rho_omega, &gi);
    fit.precision_converged = gi.converged;
  }
  fit.omega_sqrt = psd_sqrt(fit.omega_hat);
  return fit;
}

}  // namespace stein
