#include "stein/moments.hpp"

#include <cmath>
#include <stdexcept>

namespace stein {

Vector first_order_vector(const Vector& tvals, const Matrix& zres,
                          const Matrix& omega) {
  const Index n = zres.rows(), q = zres.cols();
  if (tvals.size() != n || omega.rows() != q || omega.cols() != q)
    throw std::invalid_argument("first_order_vector: shape mismatch");
  const Vector raw = (zres.transpose() * tvals) / static_cast<double>(n);
  return omega * raw;
}

Matrix second_order_matrix(const Vector& tvals, const Matrix& zres,
                           const Matrix& sigma, const Matrix& omega_sqrt) {
  const Index n = zres.rows(), q = zres.cols();
  if (tvals.size() != n || sigma.rows() != q || sigma.cols() != q ||
      omega_sqrt.rows() != q || omega_sqrt.cols() != q)
    throw std::invalid_argument("second_order_matrix: shape mismatch");
  const double tbar = tvals.mean();
  Matrix inner(q, q);
  inner.noalias() = zres.transpose() * tvals.asDiagonal() * zres;
  inner /= static_cast<double>(n);
  inner.noalias() -= tbar * sigma;
  Matrix k = omega_sqrt * inner * omega_sqrt;
  return 0.5 * (k + k.transpose());
}

namespace {

// Rayleigh-Ritz step on span{v, Kv}. For a sign-degenerate top pair
// (eigenvalues +s and -s) this span contains both eigenvectors, so the
// 2x2 projected problem resolves the sign that plain iteration on K^2
// cannot. Returns the residual norm of the refined pair.
double ritz_refine(const Matrix& k, const Vector& v, double& lambda_out,
                   Vector& u_out) {
  const Vector kv = k * v;
  Vector r = kv - v.dot(kv) * v;
  const double rn = r.norm();
  if (rn <= 1e-14 * std::max(1.0, kv.norm())) {
    lambda_out = v.dot(kv);
    u_out = v;
    return (kv - lambda_out * v).norm();
  }
  const Vector q2 = r / rn;
  const Vector kq2 = k * q2;
  const double a11 = v.dot(kv);
  const double a12 = v.dot(kq2);
  const double a22 = q2.dot(kq2);

  const double half_tr = 0.5 * (a11 + a22);
  const double disc =
      std::sqrt(std::max(half_tr * half_tr - (a11 * a22 - a12 * a12), 0.0));
  const double l_hi = half_tr + disc;
  const double l_lo = half_tr - disc;
  const double lam = std::abs(l_hi) >= std::abs(l_lo) ? l_hi : l_lo;

  // Eigenvector of the 2x2 block, taking the better-conditioned row.
  double c1 = a12, c2 = lam - a11;
  if (std::hypot(lam - a22, a12) > std::hypot(c1, c2)) {
    c1 = lam - a22;
    c2 = a12;
  }
  const double cn = std::hypot(c1, c2);
  if (cn == 0.0) {
    lambda_out = a11;
    u_out = v;
    return (kv - lambda_out * v).norm();
  }
  Vector u = (c1 / cn) * v + (c2 / cn) * q2;
  u /= u.norm();
  lambda_out = u.dot(k * u);
  u_out = u;
  return (k * u - lambda_out * u).norm();
}

}  // namespace

EigenPair leading_eigenpair(const Matrix& k) {
  const Index q = k.rows();
  if (k.cols() != q) throw std::invalid_argument("leading_eigenpair: not square");
  if ((k - k.transpose()).cwiseAbs().maxCoeff() >
      1e-8 * std::max(1.0, k.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("leading_eigenpair: input not symmetric");

  constexpr int kMaxIter = 10000;
  constexpr double kTol = 1e-8;

  const Matrix b = k * k;  // shares eigenvectors with k, eigenvalues lambda^2

  // Deterministic start: coordinate with the largest diagonal of K^2.
  Index j0 = 0;
  for (Index i = 1; i < q; ++i)
    if (b(i, i) > b(j0, j0)) j0 = i;
  Vector v = Vector::Zero(q);
  v[j0] = 1.0;

  Vector u;
  double lambda = 0.0;
  double resid = 0.0;
  bool converged = false;
  int iter = 0;
  for (; iter < kMaxIter; ++iter) {
    resid = ritz_refine(k, v, lambda, u);
    if (resid <= kTol * std::max(1.0, std::abs(lambda))) {
      converged = true;
      break;
    }
    Vector w = b * v;
    const double wn = w.norm();
    if (wn == 0.0) {
      // v lies in the nullspace of K^2 = nullspace of K; (0, v) is exact.
      lambda = 0.0;
      u = v;
      converged = true;
      break;
    }
    v = w / wn;
  }
  if (!converged)
    throw std::runtime_error(
        "leading_eigenpair: no convergence after 10000 iterations "
        "(near-degenerate spectrum; residual " +
        std::to_string(resid) + ")");

  Index imax = 0;
  for (Index i = 1; i < u.size(); ++i)
    if (std::abs(u[i]) > std::abs(u[imax])) imax = i;
  if (u[imax] < 0.0) u = -u;

  EigenPair out;
  out.lambda = u.dot(k * u);
  out.v = u;
  out.iterations = iter;
  return out;
}

double candidate_strength(const SteinCandidate& c) {
  if (c.order == 1) return c.u.norm();
  return std::abs(c.lambda);
}

}  // namespace stein
