#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "stein/data.hpp"

using namespace stein;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const auto dir = std::filesystem::temp_directory_path() / "stein_data_tests";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

ColumnManifest basic_manifest() {
  ColumnManifest m;
  m.response = "y";
  m.rules = {{"x*", ColumnRole::Nuisance}, {"z*", ColumnRole::Feature}};
  m.default_role = ColumnRole::Drop;
  return m;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("load drops rows with missing response") {
  const std::string path = write_temp("missing_response.csv",
                                      "y,x1,z1,z2\n"
                                      "1.0,0.1,1,2\n"
                                      ",0.2,3,4\n"
                                      "2.0,0.3,5,6\n"
                                      "3.0,0.4,7,8\n"
                                      "4.0,0.5,9,10\n");
  const Dataset d = load_table(path, basic_manifest());
  CHECK(d.n() == 4);
  CHECK(d.p() == 1);
  CHECK(d.q() == 2);
  CHECK(d.y[0] == doctest::Approx(1.0));
  CHECK(d.y[1] == doctest::Approx(2.0));
}

TEST_CASE("manifest drop removes the column") {
  ColumnManifest m = basic_manifest();
  m.rules.push_back({"z2", ColumnRole::Drop});
  // Exact rules are scanned in order, so put the drop first.
  std::swap(m.rules.front(), m.rules.back());
  const std::string path = write_temp("dropped.csv",
                                      "y,x1,z1,z2\n"
                                      "1,0,1,2\n"
                                      "2,1,3,4\n");
  const Dataset d = load_table(path, m);
  CHECK(d.q() == 1);
  CHECK(d.names_z == std::vector<std::string>{"z1"});
}

TEST_CASE("column over the missing-rate cap is removed") {
  // z2 is missing in 2 of 5 retained rows (40% > 30% cap).
  const std::string path = write_temp("cap.csv",
                                      "y,x1,z1,z2\n"
                                      "1,0.0,1,\n"
                                      "2,0.5,2,4\n"
                                      "3,1.0,3,NA\n"
                                      "4,1.5,4,5\n"
                                      "5,2.0,5,6\n");
  const Dataset d = load_table(path, basic_manifest());
  CHECK(d.q() == 1);
  CHECK(d.names_z == std::vector<std::string>{"z1"});
}

TEST_CASE("mean imputation and categorical encoding") {
  const std::string path = write_temp("mixed.csv",
                                      "y,x1,x2,z1\n"
                                      "1,2.0,red,1\n"
                                      "2,,green,2\n"
                                      "3,4.0,red,3\n"
                                      "4,6.0,blue,4\n");
  const Dataset d = load_table(path, basic_manifest());
  CHECK(d.p() == 2);
  // Missing x1 imputed by the observed mean (2+4+6)/3 = 4.
  CHECK(d.x(1, 0) == doctest::Approx(4.0));
  // First-appearance codes: red=0, green=1, blue=2.
  CHECK(d.x(0, 1) == doctest::Approx(0.0));
  CHECK(d.x(1, 1) == doctest::Approx(1.0));
  CHECK(d.x(3, 1) == doctest::Approx(2.0));
  CHECK(d.x.allFinite());
}

TEST_CASE("loader errors") {
  ColumnManifest m = basic_manifest();
  CHECK_THROWS(load_table("/nonexistent/file.csv", m));

  const std::string path = write_temp("tiny.csv", "y,z1\n1,2\n");
  ColumnManifest bad = m;
  bad.rules.push_back({"nope", ColumnRole::Feature});
  CHECK_THROWS_WITH_AS(load_table(path, bad),
                       doctest::Contains("unknown column"), std::runtime_error);

  const std::string empty = write_temp("allmissing.csv", "y,z1\nNA,2\nNA,3\n");
  CHECK_THROWS_WITH_AS(load_table(empty, m),
                       doctest::Contains("zero rows"), std::runtime_error);
}

TEST_CASE("tab delimiter") {
  const std::string path = write_temp("tabbed.tsv",
                                      "y\tx1\tz1\tz2\n"
                                      "1\t0\t1\t2\n"
                                      "2\t1\t3\t4\n");
  const Dataset d = load_table(path, basic_manifest(), '\t');
  CHECK(d.n() == 2);
  CHECK(d.q() == 2);
}

TEST_CASE("standardize: [1,2,3] becomes [-1,0,1]") {
  Dataset d;
  d.y = Vector::Zero(3);
  d.x = Matrix(3, 0);
  d.z = Matrix(3, 1);
  d.z << 1, 2, 3;
  d.names_z = {"z1"};
  const auto [out, params] = standardize(d);
  CHECK(out.z(0, 0) == doctest::Approx(-1.0));
  CHECK(out.z(1, 0) == doctest::Approx(0.0));
  CHECK(out.z(2, 0) == doctest::Approx(1.0));
  CHECK(params.mean_z[0] == doctest::Approx(2.0));
  CHECK(params.sd_z[0] == doctest::Approx(1.0));
}

TEST_CASE("standardize drops constant columns and is idempotent") {
  Dataset d;
  d.y = Vector::Zero(4);
  d.x = Matrix(4, 0);
  d.z = Matrix(4, 3);
  d.z << 1, 7, 0.5, 2, 7, 1.5, 3, 7, 2.5, 4, 7, 3.5;
  d.names_z = {"z1", "zconst", "z3"};
  const auto [out, params] = standardize(d);
  CHECK(out.q() == 2);
  CHECK(params.dropped == std::vector<std::string>{"zconst"});

  const auto [out2, params2] = standardize(out);
  CHECK((out2.z - out.z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("standardize requires two rows") {
  Dataset d;
  d.y = Vector::Zero(1);
  d.x = Matrix(1, 0);
  d.z = Matrix::Ones(1, 1);
  d.names_z = {"z1"};
  CHECK_THROWS(standardize(d));
}

TEST_CASE("variance prescreen ranks by variance, ties to lower index") {
  Matrix z(3, 3);
  z.col(0) << -1, 0, 1;                      // variance 1
  z.col(1) = std::sqrt(5.0) * z.col(0);      // variance 5
  z.col(2) = std::sqrt(3.0) * z.col(0);      // variance 3
  CHECK(variance_prescreen(z, 2) == std::vector<Index>{1, 2});
  CHECK(variance_prescreen(z, 3) == std::vector<Index>{1, 2, 0});

  Matrix equal(3, 2);
  equal.col(0) << -1, 0, 1;
  equal.col(1) << 1, 0, -1;
  CHECK(variance_prescreen(equal, 1) == std::vector<Index>{0});

  CHECK_THROWS(variance_prescreen(z, 0));
  CHECK_THROWS(variance_prescreen(z, 4));
}

TEST_CASE("kfold: partition, sizes, determinism") {
  const auto folds = kfold_split(10, 5, 7);
  REQUIRE(folds.size() == 5);
  std::set<Index> seen;
  for (const auto& f : folds) {
    CHECK(f.test.size() == 2);
    for (Index i : f.test) {
      CHECK(!seen.count(i));
      seen.insert(i);
    }
  }
  CHECK(seen.size() == 10);

  const auto again = kfold_split(10, 5, 7);
  for (int f = 0; f < 5; ++f) CHECK(again[f].test == folds[f].test);
  const auto other = kfold_split(10, 5, 8);
  bool any_diff = false;
  for (int f = 0; f < 5; ++f) any_diff |= other[f].test != folds[f].test;
  CHECK(any_diff);
}

TEST_CASE("kfold: n=7, k=5 gives sizes {2,2,1,1,1}") {
  const auto folds = kfold_split(7, 5, 1);
  std::multiset<std::size_t> sizes;
  for (const auto& f : folds) sizes.insert(f.test.size());
  CHECK(sizes == std::multiset<std::size_t>{1, 1, 1, 2, 2});
  CHECK_THROWS(kfold_split(7, 1, 0));
  CHECK_THROWS(kfold_split(7, 8, 0));
}

TEST_CASE("loading then standardizing is deterministic") {
  const std::string path = write_temp("det.csv",
                                      "y,x1,z1,z2\n"
                                      "1,0.3,1.5,2\n"
                                      "2,1.1,3.25,4\n"
                                      "3,2.7,5.5,6\n");
  const Dataset a = load_table(path, basic_manifest());
  const Dataset b = load_table(path, basic_manifest());
  CHECK(a.y == b.y);
  CHECK(a.x == b.x);
  CHECK(a.z == b.z);
  const auto [sa, pa] = standardize(a);
  const auto [sb, pb] = standardize(b);
  CHECK(sa.z == sb.z);
  CHECK(sa.x == sb.x);
}

TEST_CASE("manifest json round trip") {
  ColumnManifest m = basic_manifest();
  m.missing_rate_cap = 0.25;
  const ColumnManifest back = ColumnManifest::from_json(m.to_json());
  CHECK(back.response == m.response);
  CHECK(back.missing_rate_cap == doctest::Approx(0.25));
  CHECK(back.rules.size() == m.rules.size());
}

TEST_CASE("scaling params json round trip") {
  Dataset d;
  d.y = Vector::LinSpaced(4, 1.0, 4.0);
  d.x = Matrix(4, 1);
  d.x << 0.5, 1.5, 2.25, 4.0;
  d.names_x = {"x1"};
  d.z = Matrix(4, 1);
  d.z << -1, 0, 2, 5;
  d.names_z = {"z1"};
  const auto [out, params] = standardize(d, true);
  const ScalingParams back = ScalingParams::from_json(params.to_json());
  CHECK(back.mean_z[0] == params.mean_z[0]);
  CHECK(back.sd_z[0] == params.sd_z[0]);
  CHECK(back.mean_y == params.mean_y);
  CHECK(back.y_scaled);
}

}  // TEST_SUITE
