#include <doctest.h>

#include <cmath>

#include "stein/nuisance.hpp"
#include "stein/types.hpp"

using namespace stein;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

Matrix random_spd(Index q, Rng& rng) {
  const Matrix a = random_matrix(q, q, rng);
  return a * a.transpose() + 0.5 * Matrix::Identity(q, q);
}

}  // namespace

TEST_SUITE("nuisance") {

TEST_CASE("ols recovers a noiseless linear map") {
  Rng rng(1);
  const Index n = 200, p = 4, q = 3;
  const Matrix x = random_matrix(n, p, rng);
  const Matrix a_true = random_matrix(q, p, rng);
  const Matrix z = x * a_true.transpose();
  const Matrix a_hat = fit_mean_ols(x, z);
  CHECK((a_hat - a_true).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("ols with orthonormal design picks out the column") {
  const Index n = 4;
  Matrix x(n, 2);
  x.col(0) << 0.5, 0.5, 0.5, 0.5;
  x.col(1) << 0.5, -0.5, 0.5, -0.5;
  const Matrix z = x.col(0);
  const Matrix a_hat = fit_mean_ols(x, z);
  CHECK(a_hat(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(a_hat(0, 1)) < 1e-9);
}

TEST_CASE("ols matches the normal-equation oracle") {
  Rng rng(42);
  const Index n = 500, p = 5, q = 3;
  const Matrix x = random_matrix(n, p, rng);
  Matrix z = random_matrix(n, q, rng);
  const Matrix a_hat = fit_mean_ols(x, z);
  // Independent route: dense inverse of the normal equations.
  const Matrix oracle =
      ((x.transpose() * x).inverse() * (x.transpose() * z)).transpose();
  CHECK((a_hat - oracle).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("ols preconditions") {
  Rng rng(5);
  const Matrix x = random_matrix(3, 4, rng);
  const Matrix z = random_matrix(3, 2, rng);
  CHECK_THROWS(fit_mean_ols(x, z));  // n <= p

  Matrix sing(10, 2);
  sing.col(0) = random_matrix(10, 1, rng);
  sing.col(1) = 2.0 * sing.col(0);  // exactly collinear
  CHECK_THROWS_AS(fit_mean_ols(sing, random_matrix(10, 1, rng)),
                  std::runtime_error);
}

TEST_CASE("lasso: large penalty shuts the row off") {
  Rng rng(7);
  const Index n = 100, p = 3;
  const Matrix x = random_matrix(n, p, rng);
  const Matrix z = random_matrix(n, 1, rng);
  const double lmax = ((x.transpose() * z) / static_cast<double>(n))
                          .cwiseAbs()
                          .maxCoeff();
  const Matrix a = fit_mean_lasso(x, z, lmax + 0.01);
  CHECK(a.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lasso with zero penalty equals ols") {
  Rng rng(8);
  const Index n = 300, p = 4, q = 2;
  const Matrix x = random_matrix(n, p, rng);
  const Matrix z = random_matrix(n, q, rng);
  const Matrix ols = fit_mean_ols(x, z);
  const Matrix lasso = fit_mean_lasso(x, z, 0.0);
  CHECK((ols - lasso).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("lasso matches the soft-threshold oracle on an orthogonal design") {
  Matrix x(4, 2);
  x.col(0) << 1, 1, -1, -1;
  x.col(1) << 1, -1, 1, -1;  // orthogonal, (1/n)||x_k||^2 = 1
  const Matrix z = 2.0 * x.col(0) - 0.5 * x.col(1);
  const double lambda = 0.3;
  const Matrix a = fit_mean_lasso(x, z, lambda);
  // Closed form: soft((1/n) x_k' z, lambda).
  CHECK(a(0, 0) == doctest::Approx(1.7).epsilon(1e-8));
  CHECK(a(0, 1) == doctest::Approx(-0.2).epsilon(1e-8));
}

TEST_CASE("lasso threaded run matches sequential") {
  Rng rng(9);
  const Matrix x = random_matrix(150, 6, rng);
  const Matrix z = random_matrix(150, 5, rng);
  const Matrix seq = fit_mean_lasso(x, z, 0.05, nullptr, 1);
  const Matrix par = fit_mean_lasso(x, z, 0.05, nullptr, 4);
  CHECK((seq - par).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sample covariance: frozen hand computation") {
  Matrix r(3, 2);
  r << 1, 2, 2, 4, 3, 3;
  const Matrix s = sample_covariance(r);
  CHECK(s(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(s(1, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(s(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(s(1, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("sample covariance: +-1 columns") {
  Matrix r(2, 2);
  r << 1, 1, -1, -1;
  const Matrix s = sample_covariance(r);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(s(0, 1) == doctest::Approx(1.0));
  r.col(1) << -1, 1;
  const Matrix s2 = sample_covariance(r);
  CHECK(s2(0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("sample covariance of identical columns is rank one") {
  Rng rng(10);
  Matrix r(20, 3);
  r.col(0) = random_matrix(20, 1, rng);
  r.col(1) = r.col(0);
  r.col(2) = r.col(0);
  const Matrix s = sample_covariance(r);
  Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues()[0] < 1e-12);
  CHECK(es.eigenvalues()[1] < 1e-12);
  CHECK(es.eigenvalues()[2] > 0.0);
}

TEST_CASE("graphical lasso: identity input stays identity") {
  const Matrix s = Matrix::Identity(4, 4);
  for (double rho : {0.0, 0.1, 1.0}) {
    const Matrix omega = graphical_lasso(s, rho);
    CHECK((omega - s).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("graphical lasso with zero penalty inverts") {
  Rng rng(12);
  const Matrix s = random_spd(5, rng);
  const Matrix omega = graphical_lasso(s, 0.0);
  CHECK((omega - s.inverse()).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("graphical lasso on an AR(1) covariance matches the direct inverse") {
  const double rho = 0.6;
  Matrix s(3, 3);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j)
      s(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
  const Matrix omega = graphical_lasso(s, 0.0);
  const Matrix oracle = s.inverse();
  CHECK((omega - oracle).cwiseAbs().maxCoeff() < 1e-4);
  // Tridiagonal structure of the AR(1) precision.
  CHECK(std::abs(omega(0, 2)) < 1e-4);
}

TEST_CASE("graphical lasso satisfies its own optimality conditions") {
  Rng rng(13);
  const Matrix s = sample_covariance(random_matrix(80, 6, rng));
  const double rho = 0.1;
  const Matrix omega = graphical_lasso(s, rho);
  const Matrix gap = s - omega.inverse();
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j)
      if (i != j) CHECK(std::abs(gap(i, j)) <= rho + 1e-4);

  Eigen::SelfAdjointEigenSolver<Matrix> es(omega, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("graphical lasso rejects bad input") {
  Matrix asym(2, 2);
  asym << 1, 0.5, -0.5, 1;
  CHECK_THROWS(graphical_lasso(asym, 0.1));
  Matrix indef(2, 2);
  indef << 1, 2, 2, 1;
  CHECK_THROWS(graphical_lasso(indef, 0.1));
}

TEST_CASE("residualize") {
  Rng rng(14);
  const Matrix x = random_matrix(30, 3, rng);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix z = x * a.transpose();

  CHECK((residualize(z, x, Matrix::Zero(4, 3)) - z).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(residualize(z, x, a).cwiseAbs().maxCoeff() < 1e-12);

  const Matrix z2 = random_matrix(30, 4, rng);
  const Matrix r = residualize(z2, x, a);
  for (Index i = 0; i < 30; ++i) {
    const Vector expect = z2.row(i).transpose() - a * x.row(i).transpose();
    CHECK((r.row(i).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  CHECK_THROWS(residualize(z2, x, Matrix::Zero(4, 2)));
}

TEST_CASE("psd sqrt: diagonal and random cases") {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 4.0;
  d(1, 1) = 9.0;
  const Matrix r = psd_sqrt(d);
  CHECK(r(0, 0) == doctest::Approx(2.0));
  CHECK(r(1, 1) == doctest::Approx(3.0));
  CHECK(std::abs(r(0, 1)) < 1e-12);

  CHECK((psd_sqrt(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  Rng rng(15);
  const Matrix spd = random_spd(4, rng);
  const Matrix root = psd_sqrt(spd);
  CHECK((root * root - spd).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((root * spd - spd * root).cwiseAbs().maxCoeff() < 1e-8);

  Matrix indef(2, 2);
  indef << 1, 0, 0, -1;
  CHECK_THROWS(psd_sqrt(indef));
}

TEST_CASE("regime boundary: penalty-free high-dim fit matches low-dim fit") {
  Rng rng(16);
  const Index n = 2000, p = 5, q = 4;
  Matrix x = random_matrix(n, p, rng);
  x.rowwise() -= x.colwise().mean();
  const Matrix a_true = 0.3 * random_matrix(q, p, rng);
  Matrix z = x * a_true.transpose() + random_matrix(n, q, rng);

  const NuisanceFit low = fit_nuisance(x, z, Regime::Low);
  const NuisanceFit high = fit_nuisance(x, z, Regime::High, 0.0, 0.0);
  CHECK((low.a_hat - high.a_hat).norm() < 1e-3);
  CHECK((low.sigma_hat - high.sigma_hat).norm() < 1e-3);
  CHECK((low.omega_hat - high.omega_hat).norm() < 1e-3);
}

TEST_CASE("nuisance fit invariants") {
  Rng rng(17);
  const Index n = 400, p = 3, q = 5;
  const Matrix x = random_matrix(n, p, rng);
  const Matrix z = random_matrix(n, q, rng);
  for (Regime regime : {Regime::Low, Regime::High}) {
    const NuisanceFit nf = fit_nuisance(x, z, regime);
    CHECK((nf.sigma_hat - nf.sigma_hat.transpose()).cwiseAbs().maxCoeff() <
          1e-10);
    Eigen::SelfAdjointEigenSolver<Matrix> es(nf.omega_hat,
                                             Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK((nf.omega_sqrt * nf.omega_sqrt - nf.omega_hat)
              .cwiseAbs()
              .maxCoeff() < 1e-8);
  }
}

}  // TEST_SUITE
