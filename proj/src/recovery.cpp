#include "stein/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stein {

Vector hard_threshold(const Vector& u, Index s) {
  const Index q = u.size();
  if (s < 1 || s > q) throw std::invalid_argument("hard_threshold: s out of range");
  if (s == q) return u;
  std::vector<Index> idx(static_cast<std::size_t>(q));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
    const double ma = std::abs(u[a]), mb = std::abs(u[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  Vector out = Vector::Zero(q);
  for (Index i = 0; i < s; ++i) {
    const Index j = idx[static_cast<std::size_t>(i)];
    out[j] = u[j];
  }
  return out;
}

double fix_sign_convention(Vector& v) {
  Index imax = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
  if (v[imax] < 0.0) {
    v = -v;
    return -1.0;
  }
  return 1.0;
}

TpmResult truncated_power_method(const Matrix& k, Index s, int max_iter,
                                 double tol) {
  const Index q = k.rows();
  if (k.cols() != q)
    throw std::invalid_argument("truncated_power_method: not square");
  if (s < 1 || s > q)
    throw std::invalid_argument("truncated_power_method: s out of range");

  auto rayleigh = [&](const Vector& v) { return std::abs(v.dot(k * v)); };
  auto sparsify = [&](const Vector& raw) -> Vector {
    Vector t = hard_threshold(raw, s);
    const double nrm = t.norm();
    if (nrm > 0.0) return t / nrm;
    return Vector();
  };

  // Leading-coordinate start: the column under the largest |diagonal|.
  Index j0 = 0;
  for (Index i = 1; i < q; ++i)
    if (std::abs(k(i, i)) > std::abs(k(j0, j0))) j0 = i;
  Vector v = sparsify(k.col(j0));
  if (v.size() == 0) {
    v = Vector::Zero(q);
    v[j0] = 1.0;
  }

  TpmResult best;
  best.v = v;
  best.lambda = v.dot(k * v);
  best.converged = false;

  int iter = 0;
  for (; iter < max_iter; ++iter) {
    Vector cand = sparsify(k * v);
    if (cand.size() == 0) {
      best.converged = true;  // K v vanished on every kept coordinate
      break;
    }
    if (cand.dot(v) < 0.0) cand = -cand;

    // Reject Rayleigh decreases, halving the step toward v.
    const double r_prev = rayleigh(v);
    if (rayleigh(cand) + 1e-14 < r_prev) {
      bool improved = false;
      Vector step = cand - v;
      for (int b = 1; b <= 20; ++b) {
        step *= 0.5;
        Vector mid = sparsify(v + step);
        if (mid.size() == 0) continue;
        if (mid.dot(v) < 0.0) mid = -mid;
        if (rayleigh(mid) + 1e-14 >= r_prev) {
          cand = mid;
          improved = true;
          break;
        }
      }
      if (!improved) {
        best.converged = true;  // no ascent direction left
        break;
      }
    }

    const double move = std::min((cand - v).norm(), (cand + v).norm());
    v = cand;
    if (rayleigh(v) >= rayleigh(best.v)) {
      best.v = v;
      best.lambda = v.dot(k * v);
    }
    if (move < tol) {
      best.converged = true;
      break;
    }
  }
  best.iterations = iter;
  best.lambda = best.v.dot(k * best.v);
  return best;
}

EncoderFit finalize(const Vector& u, Regime regime, Index s, int order,
                    const Matrix* k_matrix, const Matrix* omega_sqrt,
                    bool threshold_whitened) {
  const Index q = u.size();
  if (!(u.norm() > 0.0))
    throw std::invalid_argument("finalize: degenerate direction");
  if (order != 1 && order != 2)
    throw std::invalid_argument("finalize: order must be 1 or 2");

  EncoderFit fit;
  fit.order = order;
  fit.regime = regime;

  Vector g0;
  if (regime == Regime::Low) {
    g0 = u;
  } else {
    if (s < 1 || s > q) throw std::invalid_argument("finalize: s out of range");
    if (order == 1 || k_matrix == nullptr || omega_sqrt == nullptr) {
      g0 = hard_threshold(u, s);
    } else if (threshold_whitened) {
      // Sparsify in the whitened basis, map back, re-threshold.
      const TpmResult tpm = truncated_power_method(*k_matrix, s);
      Vector mapped = (*omega_sqrt) * tpm.v;
      if (!(mapped.norm() > 0.0)) mapped = u;
      g0 = hard_threshold(mapped, s);
    } else {
      g0 = hard_threshold(u, s);
    }
    if (!(g0.norm() > 0.0)) g0 = hard_threshold(u, s);
  }

  fit.gamma = g0 / g0.norm();
  fix_sign_convention(fit.gamma);
  if (regime == Regime::High) {
    for (Index i = 0; i < q; ++i)
      if (fit.gamma[i] != 0.0) fit.support.push_back(i);
  }
  return fit;
}

}  // namespace stein
