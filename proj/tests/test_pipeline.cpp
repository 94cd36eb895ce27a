#include <doctest.h>

#include <cmath>

#include "stein/pipeline.hpp"
#include "stein/types.hpp"

using namespace stein;

namespace {

// Single-index draws with identity covariances and no nuisance effect.
Dataset make_single_index(Index n, Index p, Index q, const Vector& beta,
                          bool quadratic, double noise_sd, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x.resize(n, p);
  d.z.resize(n, q);
  d.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) d.x(i, j) = rng.normal();
    for (Index j = 0; j < q; ++j) d.z(i, j) = rng.normal();
    const double t = d.z.row(i).dot(beta);
    d.y[i] = (quadratic ? t * t : t) + noise_sd * rng.normal();
  }
  for (Index j = 0; j < p; ++j) d.names_x.push_back("x" + std::to_string(j));
  for (Index j = 0; j < q; ++j) d.names_z.push_back("z" + std::to_string(j));
  return d;
}

Vector unit_beta(Index q) {
  Vector beta = Vector::Zero(q);
  beta[0] = 1;
  beta[2] = 1;
  beta[4] = -1;
  beta[6] = 1;
  beta[8] = -1;
  return beta / beta.norm();
}

PipelineConfig test_config(std::uint64_t seed) {
  PipelineConfig cfg;
  cfg.seed = seed;
  cfg.permutations = 30;
  return cfg;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("linear single-index data selects the first-order identity probe") {
  const Index q = 20;
  const Vector beta = unit_beta(q);
  const Dataset d = make_single_index(2000, 3, q, beta, false, 0.45, 101);
  const FitReport report = fit(d, test_config(7));
  CHECK(report.fit.order == 1);
  CHECK(report.fit.probe.kind == ProbeKind::Identity);
  CHECK_FALSE(report.fit.fallback_used);
  const SignAlignment align = align_sign(report.fit.gamma, beta);
  CHECK(align.angle_deg < 10.0);
}

TEST_CASE("symmetric link suppresses order 1 and selects an order-2 candidate") {
  const Index q = 20;
  const Vector beta = unit_beta(q);
  const Dataset d = make_single_index(2000, 3, q, beta, true, 0.63, 505);
  const FitReport report = fit(d, test_config(8));
  CHECK(report.fit.order == 2);
  CHECK_FALSE(report.fit.fallback_used);
  // The identity-probe first-order strength sits below its threshold.
  CHECK(report.strengths.front().strength1 <= report.tau1);
  const SignAlignment align = align_sign(report.fit.gamma, beta);
  CHECK(align.err < 0.3);
}

TEST_CASE("independent response falls back") {
  Rng rng(303);
  Dataset d = make_single_index(600, 2, 10, unit_beta(10), false, 1.0, 404);
  for (Index i = 0; i < d.n(); ++i) d.y[i] = rng.normal();  // break the link
  const FitReport report = fit(d, test_config(9));
  CHECK(report.fit.fallback_used);
  CHECK(report.fit.gamma.norm() == doctest::Approx(1.0));
}

TEST_CASE("fit is deterministic given the seed") {
  const Dataset d = make_single_index(500, 2, 12, unit_beta(12), false, 0.5, 55);
  const FitReport a = fit(d, test_config(11));
  const FitReport b = fit(d, test_config(11));
  CHECK(a.fit.gamma == b.fit.gamma);
  CHECK(a.tau1 == b.tau1);
  CHECK(a.tau2 == b.tau2);
  for (std::size_t i = 0; i < a.strengths.size(); ++i) {
    CHECK(a.strengths[i].strength1 == b.strengths[i].strength1);
    CHECK(a.strengths[i].strength2 == b.strengths[i].strength2);
  }

  const FitReport c = fit(d, test_config(12));
  CHECK(c.tau1 != a.tau1);  // different permutation stream
}

TEST_CASE("fit report json round-trips losslessly") {
  const Dataset d = make_single_index(400, 2, 10, unit_beta(10), false, 0.5, 66);
  const FitReport a = fit(d, test_config(13));
  const FitReport b = FitReport::from_json(a.to_json());
  CHECK(a.fit.gamma == b.fit.gamma);
  CHECK(a.fit.order == b.fit.order);
  CHECK(a.fit.support == b.fit.support);
  CHECK(a.fit.strength == b.fit.strength);
  CHECK(a.tau1 == b.tau1);
  CHECK(a.tau2 == b.tau2);
  CHECK(a.n == b.n);
  CHECK(a.seed == b.seed);
  CHECK(a.timing_seconds == b.timing_seconds);
  CHECK(a.strengths.size() == b.strengths.size());
  CHECK(b.to_json() == a.to_json());
}

TEST_CASE("sign-flip of the feature block mirrors the estimate") {
  const Dataset d = make_single_index(800, 2, 12, unit_beta(12), false, 0.5, 77);
  Dataset flipped = d;
  flipped.z = -d.z;
  const FitReport a = fit(d, test_config(21));
  const FitReport b = fit(flipped, test_config(21));
  const Vector minus = -a.fit.gamma;
  const SignAlignment align = align_sign(b.fit.gamma, minus);
  CHECK(align.err < 1e-8);
}

TEST_CASE("fit rejects degenerate inputs") {
  Dataset d = make_single_index(100, 1, 5, Vector::Unit(5, 0), false, 0.1, 88);
  d.y.setConstant(0.0);  // every probe value is exactly zero after centering
  CHECK_THROWS_WITH_AS(fit(d, test_config(3)),
                       doctest::Contains("degenerate"), std::runtime_error);

  Dataset narrow = d;
  narrow.z = d.z.leftCols(1);
  narrow.names_z = {"z0"};
  CHECK_THROWS(fit(narrow, test_config(3)));
}

TEST_CASE("threshold calibration: constant probe values give tau = 0") {
  Rng rng(5);
  Matrix zres(50, 4);
  for (Index i = 0; i < 50; ++i)
    for (Index j = 0; j < 4; ++j) zres(i, j) = rng.normal();
  NuisanceFit nf;
  nf.a_hat = Matrix::Zero(4, 0);
  nf.sigma_hat = Matrix::Identity(4, 4);
  nf.omega_hat = Matrix::Identity(4, 4);
  nf.omega_sqrt = Matrix::Identity(4, 4);
  const std::vector<Vector> tvals = {Vector::Zero(50), Vector::Zero(50)};
  const auto [tau1, tau2] = calibrate_thresholds(tvals, zres, nf, 25, 1);
  CHECK(tau1 == 0.0);
  CHECK(tau2 == 0.0);
  CHECK_THROWS(calibrate_thresholds(tvals, zres, nf, 10, 1));
}

TEST_CASE("threshold calibration is stable in the permutation count") {
  const Dataset d = make_single_index(800, 0, 10, unit_beta(10), false, 0.8, 99);
  NuisanceFit nf = fit_nuisance(d.x, d.z, Regime::Low);
  const Matrix zres = residualize(d.z, d.x, nf.a_hat);
  std::vector<Vector> tvals;
  for (const Probe& p : scan_order(default_probe_scales())) {
    Vector t = apply(p, d.y);
    t.array() -= t.mean();
    tvals.push_back(t);
  }
  const auto [a1, a2] = calibrate_thresholds(tvals, zres, nf, 20, 42);
  const auto [b1, b2] = calibrate_thresholds(tvals, zres, nf, 100, 42);
  CHECK(std::abs(a1 - b1) / b1 <= 0.2);
  CHECK(std::abs(a2 - b2) / b2 <= 0.2);
}

TEST_CASE("combined null scheme takes the larger threshold") {
  const Dataset d = make_single_index(400, 0, 10, unit_beta(10), true, 0.6, 97);
  NuisanceFit nf = fit_nuisance(d.x, d.z, Regime::Low);
  std::vector<Vector> tvals;
  for (const Probe& p : scan_order({0.5})) {
    Vector t = apply(p, d.y);
    t.array() -= t.mean();
    const double sd = std::sqrt(t.squaredNorm() / 399.0);
    if (sd > 0) t /= sd;
    tvals.push_back(t);
  }
  const auto [p1, p2] = calibrate_thresholds(tvals, d.z, nf, 24, 5, 1,
                                             NullScheme::Permutation);
  const auto [f1, f2] = calibrate_thresholds(tvals, d.z, nf, 24, 5, 1,
                                             NullScheme::SignFlip);
  const auto [c1, c2] = calibrate_thresholds(tvals, d.z, nf, 24, 5, 1,
                                             NullScheme::Combined);
  CHECK(c1 == std::max(p1, f1));
  CHECK(c2 == std::max(p2, f2));
  CHECK(c1 > 0.0);
  CHECK(c2 > 0.0);
}

TEST_CASE("calibration thread count does not change the thresholds") {
  const Dataset d = make_single_index(300, 0, 10, unit_beta(10), false, 0.8, 111);
  NuisanceFit nf = fit_nuisance(d.x, d.z, Regime::Low);
  std::vector<Vector> tvals;
  for (const Probe& p : scan_order({0.5})) {
    Vector t = apply(p, d.y);
    t.array() -= t.mean();
    tvals.push_back(t);
  }
  const auto [a1, a2] = calibrate_thresholds(tvals, d.z, nf, 24, 5, 1);
  const auto [b1, b2] = calibrate_thresholds(tvals, d.z, nf, 24, 5, 4);
  CHECK(a1 == b1);
  CHECK(a2 == b2);
}

TEST_CASE("encode") {
  EncoderFit fit;
  fit.gamma = Vector::Unit(3, 0);
  Matrix z(2, 3);
  z << 1, 2, 3, 4, 5, 6;
  const Vector t = encode(fit, z);
  CHECK(t[0] == doctest::Approx(1.0));
  CHECK(t[1] == doctest::Approx(4.0));

  Rng rng(6);
  Vector g(3);
  g << 0.3, -0.8, 0.52;
  g /= g.norm();
  fit.gamma = g;
  CHECK(encode(fit, g.transpose())[0] == doctest::Approx(1.0));

  Matrix zr(5, 3);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 3; ++j) zr(i, j) = rng.normal();
  const Vector enc = encode(fit, zr);
  for (Index i = 0; i < 5; ++i) {
    double dot = 0.0;
    for (Index j = 0; j < 3; ++j) dot += zr(i, j) * g[j];
    CHECK(std::abs(enc[i] - dot) < 1e-12);
  }

  Matrix bad(2, 4);
  CHECK_THROWS(encode(fit, bad));
}

TEST_CASE("align_sign") {
  Vector g(3);
  g << 0.6, 0.8, 0.0;
  SignAlignment a = align_sign(g, g);
  CHECK(a.l == 1);
  CHECK(a.err == 0.0);
  CHECK(a.angle_deg == 0.0);
  CHECK(a.proj_loss == 0.0);

  const Vector neg = -g;
  a = align_sign(neg, g);
  CHECK(a.l == -1);
  CHECK(a.err == 0.0);
  CHECK(a.angle_deg == doctest::Approx(0.0));

  // An 8.996-degree angle corresponds to projection loss about 0.0123.
  const double theta = 8.996 * M_PI / 180.0;
  Vector rotated(3);
  rotated << std::cos(theta) * 0.6 - std::sin(theta) * 0.8,
      std::sin(theta) * 0.6 + std::cos(theta) * 0.8, 0.0;
  a = align_sign(rotated, g);
  CHECK(a.angle_deg == doctest::Approx(8.996).epsilon(1e-6));
  CHECK(a.proj_loss == doctest::Approx(0.0123).epsilon(0.02));
  CHECK(std::abs(a.proj_loss - 0.013) < 1e-3);

  CHECK_THROWS(align_sign(2.0 * g, g));
}

TEST_CASE("pipeline config validation") {
  PipelineConfig cfg;
  cfg.permutations = 10;
  CHECK_THROWS(cfg.validate());
  cfg.permutations = 50;
  cfg.tau_mode = TauMode::Fixed;
  CHECK_THROWS(cfg.validate());  // fixed mode needs positive thresholds
  cfg.tau1 = 0.1;
  cfg.tau2 = 0.1;
  CHECK_NOTHROW(cfg.validate());
  cfg.probe_scales = {0.5, -0.1};
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("fixed thresholds are honored") {
  const Dataset d = make_single_index(800, 2, 12, unit_beta(12), false, 0.5, 123);
  PipelineConfig cfg;
  cfg.tau_mode = TauMode::Fixed;
  cfg.tau1 = 0.05;
  cfg.tau2 = 0.05;
  cfg.seed = 4;
  const FitReport report = fit(d, cfg);
  CHECK(report.tau1 == doctest::Approx(0.05));
  CHECK(report.fit.order == 1);
}

TEST_CASE("config json round trip") {
  PipelineConfig cfg;
  cfg.regime = RegimeChoice::High;
  cfg.s = 7;
  cfg.permutations = 33;
  cfg.seed = 99;
  const PipelineConfig back = PipelineConfig::from_json(cfg.to_json());
  CHECK(back.regime == RegimeChoice::High);
  CHECK(back.s == 7);
  CHECK(back.permutations == 33);
  CHECK(back.seed == 99);
}

}  // TEST_SUITE
