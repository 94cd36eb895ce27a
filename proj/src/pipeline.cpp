#include "stein/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "stein/parallel.hpp"

namespace stein {

namespace {

using json = nlohmann::json;

json probe_to_json(const Probe& p) {
  std::string kind;
  switch (p.kind) {
    case ProbeKind::Identity:
      kind = "identity";
      break;
    case ProbeKind::Square:
      kind = "square";
      break;
    case ProbeKind::Arctan:
      kind = "arctan";
      break;
    case ProbeKind::RationalEven:
      kind = "rational_even";
      break;
  }
  return json{{"kind", kind}, {"a", p.a}};
}

Probe probe_from_json(const json& j) {
  Probe p;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "identity")
    p.kind = ProbeKind::Identity;
  else if (kind == "square")
    p.kind = ProbeKind::Square;
  else if (kind == "arctan")
    p.kind = ProbeKind::Arctan;
  else if (kind == "rational_even")
    p.kind = ProbeKind::RationalEven;
  else
    throw std::runtime_error("unknown probe kind: " + kind);
  p.a = j.at("a").get<double>();
  return p;
}

std::vector<double> to_std(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector from_std(const std::vector<double>& v) {
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Index>(i)] = v[i];
  return out;
}

double percentile95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  if (v.empty()) return 0.0;
  const double pos = 0.95 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

/// Largest |eigenvalue| of a symmetric matrix, estimate only: power
/// iteration on K^2 with a relative-change stop. Used for the permutation
/// null where only the magnitude feeds a percentile.
double spectral_magnitude(const Matrix& k, int max_iter = 3000) {
  const Index q = k.rows();
  Index j0 = 0;
  Vector diag2(q);
  for (Index i = 0; i < q; ++i) diag2[i] = k.row(i).squaredNorm();
  for (Index i = 1; i < q; ++i)
    if (diag2[i] > diag2[j0]) j0 = i;
  Vector v = Vector::Zero(q);
  v[j0] = 1.0;
  double mu_prev = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = k * (k * v);
    const double wn = w.norm();
    if (wn == 0.0) return 0.0;
    v = w / wn;
    const double mu = v.dot(k * (k * v));
    if (it > 0 && std::abs(mu - mu_prev) <= 1e-9 * std::max(1.0, mu)) {
      mu_prev = mu;
      break;
    }
    mu_prev = mu;
  }
  return std::sqrt(std::max(mu_prev, 0.0));
}

Index default_sparsity(Index q) {
  const Index rule = std::max<Index>(
      20, static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(q)))));
  return std::min(q, rule);
}

}  // namespace

void PipelineConfig::validate() const {
  if (tau_mode == TauMode::Permutation && permutations < 20)
    throw std::invalid_argument("pipeline config: permutation count must be >= 20");
  if (tau_mode == TauMode::Fixed && (!(tau1 > 0.0) || !(tau2 > 0.0)))
    throw std::invalid_argument("pipeline config: fixed thresholds must be > 0");
  if (s < 0) throw std::invalid_argument("pipeline config: s must be >= 0");
  if (probe_scales.empty())
    throw std::invalid_argument("pipeline config: probe scale grid is empty");
  for (double a : probe_scales)
    if (!(a > 0.0))
      throw std::invalid_argument("pipeline config: probe scales must be positive");
  if (!(c_a >= 0.0) || !(c_omega >= 0.0))
    throw std::invalid_argument("pipeline config: penalty constants must be >= 0");
}

std::string PipelineConfig::to_json() const {
  json j{{"regime", regime == RegimeChoice::Auto
                        ? "auto"
                        : (regime == RegimeChoice::Low ? "low" : "high")},
         {"s", s},
         {"probe_scales", probe_scales},
         {"tau_mode", tau_mode == TauMode::Permutation ? "permutation" : "fixed"},
         {"null_scheme",
          null_scheme == NullScheme::Combined
              ? "combined"
              : (null_scheme == NullScheme::SignFlip ? "signflip"
                                                     : "permutation")},
         {"tau1", tau1},
         {"tau2", tau2},
         {"permutations", permutations},
         {"c_a", c_a},
         {"c_omega", c_omega},
         {"seed", seed},
         {"threads", threads},
         {"threshold_whitened", threshold_whitened}};
  return j.dump();
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  PipelineConfig c;
  if (j.contains("regime")) {
    const std::string r = j["regime"].get<std::string>();
    c.regime = r == "auto" ? RegimeChoice::Auto
                           : (r == "low" ? RegimeChoice::Low : RegimeChoice::High);
  }
  if (j.contains("s")) c.s = j["s"].get<Index>();
  if (j.contains("probe_scales"))
    c.probe_scales = j["probe_scales"].get<std::vector<double>>();
  if (j.contains("tau_mode"))
    c.tau_mode = j["tau_mode"].get<std::string>() == "fixed"
                     ? TauMode::Fixed
                     : TauMode::Permutation;
  if (j.contains("null_scheme")) {
    const std::string v = j["null_scheme"].get<std::string>();
    c.null_scheme = v == "permutation"
                        ? NullScheme::Permutation
                        : (v == "signflip" ? NullScheme::SignFlip
                                           : NullScheme::Combined);
  }
  if (j.contains("tau1")) c.tau1 = j["tau1"].get<double>();
  if (j.contains("tau2")) c.tau2 = j["tau2"].get<double>();
  if (j.contains("permutations")) c.permutations = j["permutations"].get<int>();
  if (j.contains("c_a")) c.c_a = j["c_a"].get<double>();
  if (j.contains("c_omega")) c.c_omega = j["c_omega"].get<double>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("threads")) c.threads = j["threads"].get<int>();
  if (j.contains("threshold_whitened"))
    c.threshold_whitened = j["threshold_whitened"].get<bool>();
  return c;
}

namespace {

std::pair<double, double> calibrate_one_scheme(
    const std::vector<Vector>& tvals_by_probe, const Matrix& zres,
    const NuisanceFit& nf, int B, std::uint64_t seed, int threads,
    bool permute) {
  const Index n = zres.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  // Precomputed pieces shared by every draw.
  const Matrix g = nf.omega_hat * zres.transpose();          // q x n
  const Matrix wz = zres * nf.omega_sqrt;                    // n x q
  const Matrix sw = nf.omega_sqrt * nf.sigma_hat * nf.omega_sqrt;

  // Null draws are generated sequentially so the result does not depend
  // on the worker count. A draw is either a row permutation or a vector
  // of Rademacher signs.
  Rng rng(mix_seed(seed, 0x7461755fULL));
  std::vector<std::vector<Index>> perms;
  std::vector<std::vector<signed char>> signs;
  if (permute) {
    perms.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
      perms[static_cast<std::size_t>(b)] = rng.permutation(n);
  } else {
    signs.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      auto& s = signs[static_cast<std::size_t>(b)];
      s.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i)
        s[static_cast<std::size_t>(i)] = (rng.next() & 1) ? 1 : -1;
    }
  }

  std::vector<double> max1(static_cast<std::size_t>(B), 0.0);
  std::vector<double> max2(static_cast<std::size_t>(B), 0.0);

  parallel_for(B, threads, [&](Index b) {
    double m1 = 0.0, m2 = 0.0;
    Vector tp(n);
    for (const Vector& t : tvals_by_probe) {
      if (permute) {
        const auto& perm = perms[static_cast<std::size_t>(b)];
        for (Index i = 0; i < n; ++i)
          tp[i] = t[perm[static_cast<std::size_t>(i)]];
      } else {
        const auto& s = signs[static_cast<std::size_t>(b)];
        for (Index i = 0; i < n; ++i)
          tp[i] = s[static_cast<std::size_t>(i)] * t[i];
      }
      const double s1 = (g * tp).norm() * inv_n;
      Matrix k(zres.cols(), zres.cols());
      k.noalias() = wz.transpose() * tp.asDiagonal() * wz;
      k *= inv_n;
      k.noalias() -= tp.mean() * sw;
      k = 0.5 * (k + k.transpose());
      const double s2 = spectral_magnitude(k);
      m1 = std::max(m1, s1);
      m2 = std::max(m2, s2);
    }
    max1[static_cast<std::size_t>(b)] = m1;
    max2[static_cast<std::size_t>(b)] = m2;
  });

  return {percentile95(max1), percentile95(max2)};
}

}  // namespace

std::pair<double, double> calibrate_thresholds(
    const std::vector<Vector>& tvals_by_probe, const Matrix& zres,
    const NuisanceFit& nf, int B, std::uint64_t seed, int threads,
    NullScheme scheme) {
  if (B < 20)
    throw std::invalid_argument("calibrate_thresholds: need at least 20 permutations");
  if (scheme == NullScheme::Permutation)
    return calibrate_one_scheme(tvals_by_probe, zres, nf, B, seed, threads,
                                true);
  if (scheme == NullScheme::SignFlip)
    return calibrate_one_scheme(tvals_by_probe, zres, nf, B, seed, threads,
                                false);
  const auto [p1, p2] =
      calibrate_one_scheme(tvals_by_probe, zres, nf, B, seed, threads, true);
  const auto [f1, f2] =
      calibrate_one_scheme(tvals_by_probe, zres, nf, B, seed, threads, false);
  return {std::max(p1, f1), std::max(p2, f2)};
}

FitReport fit(const Dataset& d, const PipelineConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();

  const Index n = d.n(), p = d.p(), q = d.q();
  if (q < 2) throw std::invalid_argument("fit: need at least two feature columns");
  if (n < 2) throw std::invalid_argument("fit: need at least two rows");

  Regime regime;
  switch (cfg.regime) {
    case RegimeChoice::Low:
      regime = Regime::Low;
      break;
    case RegimeChoice::High:
      regime = Regime::High;
      break;
    case RegimeChoice::Auto:
    default:
      regime = (p + q > n / 4) ? Regime::High : Regime::Low;
      break;
  }

  const NuisanceFit nf =
      fit_nuisance(d.x, d.z, regime, cfg.c_a, cfg.c_omega, cfg.threads);
  const Matrix zres = residualize(d.z, d.x, nf.a_hat);

  // Probe values are centered and scaled to unit sample variance before
  // any moment computation. Population directions are unchanged (the
  // moments are exactly scale-equivariant in t); the scaling puts every
  // probe's signal strength on one scale so the shared thresholds tau1,
  // tau2 mean the same thing for each probe in the scan.
  const std::vector<Probe> probes = scan_order(cfg.probe_scales);
  std::vector<Vector> tvals(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    Vector t = apply(probes[i], d.y);
    t.array() -= t.mean();
    const double sd =
        std::sqrt(t.squaredNorm() / static_cast<double>(std::max<Index>(n - 1, 1)));
    if (sd > 0.0) t /= sd;
    tvals[i] = std::move(t);
  }

  double tau1 = cfg.tau1, tau2 = cfg.tau2;
  if (cfg.tau_mode == TauMode::Permutation) {
    std::tie(tau1, tau2) =
        calibrate_thresholds(tvals, zres, nf, cfg.permutations, cfg.seed,
                             cfg.threads, cfg.null_scheme);
  }

  // All candidates are computed (for the diagnostics table and the
  // fallback); selection still follows the sequential scan order.
  struct ProbeCandidates {
    Vector nu;
    double s1 = 0.0;
    Vector u2;
    Matrix k;
    double lambda = 0.0;
    double s2 = 0.0;
  };
  std::vector<ProbeCandidates> cands(probes.size());
  parallel_for(static_cast<Index>(probes.size()), cfg.threads, [&](Index i) {
    auto& c = cands[static_cast<std::size_t>(i)];
    const Vector& t = tvals[static_cast<std::size_t>(i)];
    c.nu = first_order_vector(t, zres, nf.omega_hat);
    c.s1 = c.nu.norm();
    c.k = second_order_matrix(t, zres, nf.sigma_hat, nf.omega_sqrt);
    const EigenPair ep = leading_eigenpair(c.k);
    c.lambda = ep.lambda;
    c.s2 = std::abs(ep.lambda);
    c.u2 = nf.omega_sqrt * ep.v;
  });

  int sel_order = 0;
  std::size_t sel_probe = 0;
  bool fallback = false;
  for (std::size_t i = 0; i < probes.size() && sel_order == 0; ++i) {
    if (cands[i].s1 > tau1) {
      sel_order = 1;
      sel_probe = i;
    } else if (cands[i].s2 > tau2) {
      sel_order = 2;
      sel_probe = i;
    }
  }
  if (sel_order == 0) {
    // Fallback: maximum signal strength, compared across orders as the
    // strength/threshold ratio since vector norms and eigenvalues are not
    // on a common scale.
    fallback = true;
    auto ratio = [](double s, double tau) {
      if (tau > 0.0) return s / tau;
      return s > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    };
    double best = -1.0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const double r1 = ratio(cands[i].s1, tau1);
      if (r1 > best && cands[i].s1 > 0.0) {
        best = r1;
        sel_order = 1;
        sel_probe = i;
      }
      const double r2 = ratio(cands[i].s2, tau2);
      if (r2 > best && cands[i].s2 > 0.0) {
        best = r2;
        sel_order = 2;
        sel_probe = i;
      }
    }
    if (sel_order == 0)
      throw std::runtime_error("fit: degenerate direction (all strengths zero)");
  }

  const Index s_eff = cfg.s > 0 ? std::min(cfg.s, q) : default_sparsity(q);
  const auto& chosen = cands[sel_probe];
  const Vector& u = sel_order == 1 ? chosen.nu : chosen.u2;
  EncoderFit efit = finalize(u, regime, s_eff, sel_order,
                             sel_order == 2 ? &chosen.k : nullptr,
                             sel_order == 2 ? &nf.omega_sqrt : nullptr,
                             cfg.threshold_whitened);
  efit.probe = probes[sel_probe];
  efit.strength = sel_order == 1 ? chosen.s1 : chosen.s2;
  efit.fallback_used = fallback;
  for (std::size_t i = 0; i < probes.size(); ++i)
    efit.diagnostics.push_back(
        {probes[i].label(), cands[i].s1, cands[i].s2});

  FitReport report;
  report.fit = std::move(efit);
  report.nuisance = {nf.regime, nf.lambda_a, nf.rho_omega, nf.mean_converged,
                     nf.precision_converged};
  report.n = n;
  report.p = p;
  report.q = q;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    StrengthRow row;
    row.probe = probes[i].label();
    row.strength1 = cands[i].s1;
    row.strength2 = cands[i].s2;
    row.accepted1 = !fallback && sel_order == 1 && sel_probe == i;
    row.accepted2 = !fallback && sel_order == 2 && sel_probe == i;
    report.strengths.push_back(row);
  }
  report.tau1 = tau1;
  report.tau2 = tau2;
  report.tau_mode = cfg.tau_mode;
  report.seed = cfg.seed;
  report.notes = {
      "probe values centered and scaled to unit variance before moment "
      "computation",
      std::string("thresholds from the 95th percentile of per-draw max "
                  "strength across probes (") +
          (cfg.null_scheme == NullScheme::Combined
               ? "combined permutation/sign-flip"
               : (cfg.null_scheme == NullScheme::SignFlip ? "sign-flip"
                                                          : "permutation")) +
          " null, B=" + std::to_string(cfg.permutations) + ")",
      "penalty defaults lambda_a=c_a*sqrt(log(max(p,q))/n), "
      "rho=c_omega*sqrt(log(q)/n)"};
  report.timing_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

Vector encode(const EncoderFit& fit, const Matrix& z) {
  if (z.cols() != fit.gamma.size())
    throw std::invalid_argument("encode: feature dimension mismatch");
  return z * fit.gamma;
}

SignAlignment align_sign(const Vector& gamma_hat, const Vector& gamma_true) {
  if (gamma_hat.size() != gamma_true.size())
    throw std::invalid_argument("align_sign: dimension mismatch");
  if (std::abs(gamma_hat.norm() - 1.0) > 1e-6 ||
      std::abs(gamma_true.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("align_sign: inputs must be unit vectors");
  const double inner = gamma_hat.dot(gamma_true);
  SignAlignment out;
  out.l = inner < 0.0 ? -1 : 1;
  out.err = (gamma_hat - static_cast<double>(out.l) * gamma_true).norm();
  const double a = std::min(std::abs(inner), 1.0);
  out.angle_deg = std::acos(a) * 180.0 / M_PI;
  out.proj_loss = 1.0 - a;
  return out;
}

std::string FitReport::to_json() const {
  json jfit{{"gamma", to_std(fit.gamma)},
            {"order", fit.order},
            {"probe", probe_to_json(fit.probe)},
            {"support", fit.support},
            {"strength", fit.strength},
            {"regime", regime_name(fit.regime)},
            {"fallback_used", fit.fallback_used}};
  json jstrengths = json::array();
  for (const auto& r : strengths)
    jstrengths.push_back(json{{"probe", r.probe},
                              {"strength1", r.strength1},
                              {"strength2", r.strength2},
                              {"accepted1", r.accepted1},
                              {"accepted2", r.accepted2}});
  json j{{"fit", jfit},
         {"nuisance",
          json{{"regime", regime_name(nuisance.regime)},
               {"lambda_a", nuisance.lambda_a},
               {"rho_omega", nuisance.rho_omega},
               {"mean_converged", nuisance.mean_converged},
               {"precision_converged", nuisance.precision_converged}}},
         {"n", n},
         {"p", p},
         {"q", q},
         {"strengths", jstrengths},
         {"tau1", tau1},
         {"tau2", tau2},
         {"tau_mode", tau_mode == TauMode::Permutation ? "permutation" : "fixed"},
         {"timing_seconds", timing_seconds},
         {"seed", seed},
         {"notes", notes}};
  return j.dump(2);
}

FitReport FitReport::from_json(const std::string& text) {
  json j = json::parse(text);
  FitReport r;
  const json& jf = j.at("fit");
  r.fit.gamma = from_std(jf.at("gamma").get<std::vector<double>>());
  r.fit.order = jf.at("order").get<int>();
  r.fit.probe = probe_from_json(jf.at("probe"));
  r.fit.support = jf.at("support").get<std::vector<Index>>();
  r.fit.strength = jf.at("strength").get<double>();
  r.fit.regime =
      jf.at("regime").get<std::string>() == "low" ? Regime::Low : Regime::High;
  r.fit.fallback_used = jf.at("fallback_used").get<bool>();
  const json& jn = j.at("nuisance");
  r.nuisance.regime =
      jn.at("regime").get<std::string>() == "low" ? Regime::Low : Regime::High;
  r.nuisance.lambda_a = jn.at("lambda_a").get<double>();
  r.nuisance.rho_omega = jn.at("rho_omega").get<double>();
  r.nuisance.mean_converged = jn.at("mean_converged").get<bool>();
  r.nuisance.precision_converged = jn.at("precision_converged").get<bool>();
  r.n = j.at("n").get<Index>();
  r.p = j.at("p").get<Index>();
  r.q = j.at("q").get<Index>();
  for (const auto& jr : j.at("strengths")) {
    StrengthRow row;
    row.probe = jr.at("probe").get<std::string>();
    row.strength1 = jr.at("strength1").get<double>();
    row.strength2 = jr.at("strength2").get<double>();
    row.accepted1 = jr.at("accepted1").get<bool>();
    row.accepted2 = jr.at("accepted2").get<bool>();
    r.strengths.push_back(row);
  }
  r.tau1 = j.at("tau1").get<double>();
  r.tau2 = j.at("tau2").get<double>();
  r.tau_mode = j.at("tau_mode").get<std::string>() == "fixed"
                   ? TauMode::Fixed
                   : TauMode::Permutation;
  r.timing_seconds = j.at("timing_seconds").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.notes = j.at("notes").get<std::vector<std::string>>();
  return r;
}

}  // namespace stein
