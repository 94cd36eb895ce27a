#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "stein/types.hpp"

namespace stein {

enum class ProbeKind { Identity, Square, Arctan, RationalEven };

/// Scalar response transform used to form the moment statistics.
/// Identity and Square ignore the scale parameter; Arctan maps
/// y -> atan(a*y) and RationalEven maps y -> a*y^2 / (1 + a*y^2),
/// both bounded for any input.
struct Probe {
  ProbeKind kind = ProbeKind::Identity;
  double a = 1.0;

  std::string label() const {
    switch (kind) {
      case ProbeKind::Identity:
        return "identity";
      case ProbeKind::Square:
        return "square";
      case ProbeKind::Arctan:
        return "arctan(a=" + format_scale(a) + ")";
      case ProbeKind::RationalEven:
        return "rational_even(a=" + format_scale(a) + ")";
    }
    return "?";
  }

  static std::string format_scale(double a) {
    std::string s = std::to_string(a);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

inline double apply_scalar(const Probe& probe, double y) {
  switch (probe.kind) {
    case ProbeKind::Identity:
      return y;
    case ProbeKind::Square:
      return y * y;
    case ProbeKind::Arctan:
      return std::atan(probe.a * y);
    case ProbeKind::RationalEven: {
      const double ay2 = probe.a * y * y;
      return ay2 / (1.0 + ay2);
    }
  }
  return y;
}

template <typename Derived>
Vector apply(const Probe& probe, const Eigen::MatrixBase<Derived>& y) {
  Vector out(y.size());
  for (Index i = 0; i < y.size(); ++i) out[i] = apply_scalar(probe, y[i]);
  return out;
}

inline std::vector<double> default_probe_scales() { return {0.1, 0.5, 1.0}; }

/// Fixed scan order: identity, square, then arctan at each scale
/// ascending, then the bounded even probe at each scale ascending.
inline std::vector<Probe> scan_order(std::vector<double> scales) {
  if (scales.empty())
    throw std::invalid_argument("scan_order: scale grid must be non-empty");
  for (double a : scales)
    if (!(a > 0.0))
      throw std::invalid_argument("scan_order: scales must be positive");
  std::sort(scales.begin(), scales.end());
  std::vector<Probe> order;
  order.push_back({ProbeKind::Identity, 1.0});
  order.push_back({ProbeKind::Square, 1.0});
  for (double a : scales) order.push_back({ProbeKind::Arctan, a});
  for (double a : scales) order.push_back({ProbeKind::RationalEven, a});
  return order;
}

}  // namespace stein
