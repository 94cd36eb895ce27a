#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stein/data.hpp"
#include "stein/pipeline.hpp"
#include "stein/regressor.hpp"
#include "stein/types.hpp"

namespace stein {

enum class LinkModel { I, II, III };
enum class FeatureSetting { Independent, Correlated };

std::string link_model_name(LinkModel m);
LinkModel link_model_from_name(const std::string& s);
std::string feature_setting_name(FeatureSetting s);
FeatureSetting feature_setting_from_name(const std::string& s);

struct SimConfig {
  LinkModel model = LinkModel::I;
  FeatureSetting setting = FeatureSetting::Independent;
  Index p = 20;
  Index q = 20;
  Index n_train = 2000;
  Index n_test = 2000;
  double rho_x = 0.5;
  double rho_z = 0.3;
  double snr = 5.0;
  Index s_a = 10;  // nonzeros per coefficient row in the sparse recipe
  bool sparse_a = false;
  int replications = 20;
  std::uint64_t base_seed = 1;

  void validate() const;
};

struct ScenarioData {
  Dataset train;
  Dataset test;
  Vector gamma;     // true unit direction
  Vector t_train;   // true index per training row
  Vector t_test;
  double sigma_eps = 0.0;
  double var_f = 0.0;  // empirical variance of f over training rows
};

/// AR(1) covariance: entry (i, j) = rho^|i-j|.
Matrix ar1_covariance(Index d, double rho);

/// Fixed sparse unit direction: +1 at 1-based positions {1,3,7}, -1 at
/// {5,9}, normalized. Requires q >= 9.
Vector true_direction(Index q);

double link_eval(LinkModel model, const Vector& x_row, double t);

/// Seed-deterministic scenario draw for replication rep (seed = base XOR rep).
ScenarioData generate(const SimConfig& cfg, int rep);

struct MethodMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
};

MethodMetrics metrics(const Vector& y_true, const Vector& y_pred);

/// First principal component fit on a training block only.
struct Pc1 {
  Vector mean;
  Vector loadings;  // unit norm, largest-magnitude entry positive
};
Pc1 fit_pc1(const Matrix& z_train);
Vector pc1_scores(const Pc1& pc, const Matrix& z);

struct RepResult {
  int rep = 0;
  bool ok = false;
  std::string error;
  double angle_deg = 0.0;
  double proj_loss = 0.0;
  double aligned_err = 0.0;
  int order = 0;
  std::string probe;
  bool fallback = false;
  int alpha = 0;
  MethodMetrics raw;    // method A: [x, z]
  MethodMetrics stein;  // method B: [x, t_hat] with residual safeguard
  MethodMetrics pca;    // method C: [x, pc1(z)]
};

struct ComparisonTable {
  SimConfig config;
  std::vector<RepResult> rows;

  int n_ok() const;
  double mean_angle() const;
  double mean_proj() const;
  double median_aligned_err() const;
  MethodMetrics mean_raw() const;
  MethodMetrics mean_stein() const;
  MethodMetrics mean_pca() const;
};

/// Per replication: fit the encoder on the training half, train the three
/// capacity-matched networks (raw input, encoded index, first principal
/// component) and score them on the held-out half. Replications run on a
/// worker pool; aggregation is order independent.
ComparisonTable run_comparison(const SimConfig& sim, const PipelineConfig& pipe,
                               const MlpSpec& mlp, int threads = 1,
                               bool fit_only = false);

struct BenchmarkOptions {
  int folds = 5;
  Index top_features = 0;  // 0 = keep all
  std::uint64_t seed = 0;
  int threads = 1;
};

struct FoldRow {
  int fold = 0;
  MethodMetrics raw;    // standard network on [x, z]
  MethodMetrics pca;    // [x, pc1(z)]
  MethodMetrics stein;  // [x, t_hat] with residual safeguard
  double angle_vs_pc1 = 0.0;
  int order = 0;
  std::string probe;
};

struct BenchmarkResult {
  std::vector<FoldRow> folds;
  MethodMetrics mean_raw, mean_pca, mean_stein;
  std::vector<std::string> top_features;  // by |gamma|, last fold's fit
};

/// K-fold protocol on a loaded dataset: per fold, standardize on the
/// training part, fit the encoder, train the three networks, score the
/// held-out fold.
BenchmarkResult run_file_benchmark(const Dataset& d, const BenchmarkOptions& opt,
                                   const PipelineConfig& pipe,
                                   const MlpSpec& mlp);

}  // namespace stein
