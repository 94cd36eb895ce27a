#include "stein/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "stein/parallel.hpp"

namespace stein {

std::string link_model_name(LinkModel m) {
  switch (m) {
    case LinkModel::I:
      return "I";
    case LinkModel::II:
      return "II";
    case LinkModel::III:
      return "III";
  }
  return "?";
}

LinkModel link_model_from_name(const std::string& s) {
  if (s == "I" || s == "1") return LinkModel::I;
  if (s == "II" || s == "2") return LinkModel::II;
  if (s == "III" || s == "3") return LinkModel::III;
  throw std::invalid_argument("unknown model: " + s);
}

std::string feature_setting_name(FeatureSetting s) {
  return s == FeatureSetting::Independent ? "indep" : "corr";
}

FeatureSetting feature_setting_from_name(const std::string& s) {
  if (s == "indep" || s == "independent") return FeatureSetting::Independent;
  if (s == "corr" || s == "correlated") return FeatureSetting::Correlated;
  throw std::invalid_argument("unknown feature setting: " + s);
}

void SimConfig::validate() const {
  if (p < 1 || q < 9)
    throw std::invalid_argument("sim config: need p >= 1 and q >= 9");
  if (model == LinkModel::I && p < 4)
    throw std::invalid_argument("sim config: model I needs p >= 4");
  if ((model == LinkModel::II || model == LinkModel::III) && p < 3)
    throw std::invalid_argument("sim config: models II/III need p >= 3");
  if (n_train < 2 || n_test < 1)
    throw std::invalid_argument("sim config: sample sizes too small");
  if (!(snr > 0.0)) throw std::invalid_argument("sim config: snr must be > 0");
  if (std::abs(rho_x) >= 1.0 || std::abs(rho_z) >= 1.0)
    throw std::invalid_argument("sim config: AR parameters must lie in (-1, 1)");
  if (sparse_a && (s_a < 1 || s_a > p))
    throw std::invalid_argument("sim config: s_a out of range");
  if (replications < 1)
    throw std::invalid_argument("sim config: need at least one replication");
}

Matrix ar1_covariance(Index d, double rho) {
  if (d < 1) throw std::invalid_argument("ar1_covariance: d must be >= 1");
  if (std::abs(rho) >= 1.0)
    throw std::invalid_argument("ar1_covariance: |rho| must be < 1");
  Matrix s(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j)
      s(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
  return s;
}

Vector true_direction(Index q) {
  if (q < 9) throw std::invalid_argument("true_direction: need q >= 9");
  Vector beta = Vector::Zero(q);
  beta[0] = 1.0;
  beta[2] = 1.0;
  beta[6] = 1.0;
  beta[4] = -1.0;
  beta[8] = -1.0;
  return beta / beta.norm();
}

double link_eval(LinkModel model, const Vector& x_row, double t) {
  switch (model) {
    case LinkModel::I:
      if (x_row.size() < 4)
        throw std::invalid_argument("link_eval: model I needs 4 coordinates");
      return 2.0 * std::sin(t) + 0.3 * t * t + 1.3 * x_row[0] -
             1.1 * x_row[1] + t * x_row[3];
    case LinkModel::II:
      if (x_row.size() < 3)
        throw std::invalid_argument("link_eval: model II needs 3 coordinates");
      return t * t * std::exp(x_row[0] / 2.0) +
             0.5 * (x_row[1] * x_row[1] - 1.0) + std::sin(x_row[2]);
    case LinkModel::III:
      if (x_row.size() < 3)
        throw std::invalid_argument("link_eval: model III needs 3 coordinates");
      return 2.0 * t / (1.0 + std::exp(-x_row[0])) +
             std::sqrt(std::abs(x_row[1])) * std::abs(t + 2.0) +
             0.5 * t * t * t + 0.5 * x_row[2];
  }
  throw std::invalid_argument("link_eval: unknown model");
}

namespace {

Matrix cholesky_factor(const Matrix& s) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("cholesky_factor: matrix not positive definite");
  return llt.matrixL();
}

std::vector<std::string> block_names(const std::string& prefix, Index d) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i)
    names.push_back(prefix + std::to_string(i + 1));
  return names;
}

}  // namespace

ScenarioData generate(const SimConfig& cfg, int rep) {
  cfg.validate();
  const std::uint64_t seed = cfg.base_seed ^ static_cast<std::uint64_t>(rep);
  Rng rng(seed);

  const Index p = cfg.p, q = cfg.q;
  const Matrix lx = cholesky_factor(ar1_covariance(p, cfg.rho_x));
  const Matrix lz = cholesky_factor(ar1_covariance(q, cfg.rho_z));

  Matrix a;  // q x p, only for the correlated setting
  if (cfg.setting == FeatureSetting::Correlated) {
    a = Matrix::Zero(q, p);
    if (cfg.sparse_a) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.s_a));
      for (Index j = 0; j < q; ++j) {
        std::vector<Index> cols = rng.permutation(p);
        cols.resize(static_cast<std::size_t>(cfg.s_a));
        for (Index k : cols) a(j, k) = rng.uniform(-0.5, 0.5) * scale;
      }
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(p));
      for (Index j = 0; j < q; ++j)
        for (Index k = 0; k < p; ++k) a(j, k) = rng.uniform(-0.5, 0.5) * scale;
    }
  }

  auto draw_block = [&](Index n, Matrix& x, Matrix& z) {
    x.resize(n, p);
    z.resize(n, q);
    for (Index i = 0; i < n; ++i) {
      const Vector xi = lx * rng.normal_vector(p);
      const Vector ei = lz * rng.normal_vector(q);
      x.row(i) = xi.transpose();
      if (cfg.setting == FeatureSetting::Correlated)
        z.row(i) = (a * xi + ei).transpose();
      else
        z.row(i) = ei.transpose();
    }
  };

  ScenarioData data;
  draw_block(cfg.n_train, data.train.x, data.train.z);
  draw_block(cfg.n_test, data.test.x, data.test.z);
  data.train.names_x = data.test.names_x = block_names("x", p);
  data.train.names_z = data.test.names_z = block_names("z", q);

  data.gamma = true_direction(q);
  data.t_train = data.train.z * data.gamma;
  data.t_test = data.test.z * data.gamma;

  Vector f_train(cfg.n_train), f_test(cfg.n_test);
  for (Index i = 0; i < cfg.n_train; ++i)
    f_train[i] = link_eval(cfg.model, data.train.x.row(i).transpose(),
                           data.t_train[i]);
  for (Index i = 0; i < cfg.n_test; ++i)
    f_test[i] =
        link_eval(cfg.model, data.test.x.row(i).transpose(), data.t_test[i]);

  const double f_mean = f_train.mean();
  data.var_f = (f_train.array() - f_mean).square().sum() /
               static_cast<double>(cfg.n_train - 1);
  data.sigma_eps = std::sqrt(data.var_f / cfg.snr);

  data.train.y.resize(cfg.n_train);
  for (Index i = 0; i < cfg.n_train; ++i)
    data.train.y[i] = f_train[i] + data.sigma_eps * rng.normal();
  data.test.y.resize(cfg.n_test);
  for (Index i = 0; i < cfg.n_test; ++i)
    data.test.y[i] = f_test[i] + data.sigma_eps * rng.normal();

  return data;
}

MethodMetrics metrics(const Vector& y_true, const Vector& y_pred) {
  if (y_true.size() != y_pred.size())
    throw std::invalid_argument("metrics: length mismatch");
  if (y_true.size() < 2) throw std::invalid_argument("metrics: need n >= 2");
  MethodMetrics m;
  const Vector err = y_pred - y_true;
  m.mse = err.squaredNorm() / static_cast<double>(err.size());
  m.mae = err.cwiseAbs().mean();
  const double mean = y_true.mean();
  const double sst = (y_true.array() - mean).square().sum();
  if (!(sst > 0.0)) throw std::invalid_argument("metrics: zero total variance");
  m.r2 = 1.0 - err.squaredNorm() / sst;
  return m;
}

Pc1 fit_pc1(const Matrix& z_train) {
  const Index n = z_train.rows();
  if (n < 2) throw std::invalid_argument("fit_pc1: need n >= 2");
  Pc1 pc;
  pc.mean = z_train.colwise().mean().transpose();
  Matrix centered = z_train.rowwise() - pc.mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("fit_pc1: eigendecomposition failed");
  pc.loadings = es.eigenvectors().col(z_train.cols() - 1);
  fix_sign_convention(pc.loadings);
  return pc;
}

Vector pc1_scores(const Pc1& pc, const Matrix& z) {
  if (z.cols() != pc.loadings.size())
    throw std::invalid_argument("pc1_scores: dimension mismatch");
  return (z.rowwise() - pc.mean.transpose()) * pc.loadings;
}

namespace {

struct ColumnScale {
  double mean = 0.0;
  double sd = 1.0;
};

ColumnScale scale_of(const Vector& v) {
  ColumnScale s;
  s.mean = v.mean();
  const double var = (v.array() - s.mean).square().sum() /
                     static_cast<double>(std::max<Index>(v.size() - 1, 1));
  s.sd = std::sqrt(var);
  if (!(s.sd > 0.0)) s.sd = 1.0;
  return s;
}

Matrix standardize_block(const Matrix& train, const Matrix& value) {
  Matrix out = value;
  for (Index c = 0; c < train.cols(); ++c) {
    const ColumnScale s = scale_of(train.col(c));
    out.col(c) = (value.col(c).array() - s.mean) / s.sd;
  }
  return out;
}

Vector standardize_with(const Vector& value, const ColumnScale& s) {
  return (value.array() - s.mean) / s.sd;
}

}  // namespace

int ComparisonTable::n_ok() const {
  int k = 0;
  for (const auto& r : rows) k += r.ok ? 1 : 0;
  return k;
}

namespace {

double mean_over(const std::vector<RepResult>& rows,
                 const std::function<double(const RepResult&)>& get) {
  double sum = 0.0;
  int k = 0;
  for (const auto& r : rows)
    if (r.ok) {
      sum += get(r);
      ++k;
    }
  return k > 0 ? sum / static_cast<double>(k) : std::nan("");
}

}  // namespace

double ComparisonTable::mean_angle() const {
  return mean_over(rows, [](const RepResult& r) { return r.angle_deg; });
}

double ComparisonTable::mean_proj() const {
  return mean_over(rows, [](const RepResult& r) { return r.proj_loss; });
}

double ComparisonTable::median_aligned_err() const {
  std::vector<double> vals;
  for (const auto& r : rows)
    if (r.ok) vals.push_back(r.aligned_err);
  if (vals.empty()) return std::nan("");
  std::sort(vals.begin(), vals.end());
  const std::size_t m = vals.size();
  return m % 2 == 1 ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
}

MethodMetrics ComparisonTable::mean_raw() const {
  return {mean_over(rows, [](const RepResult& r) { return r.raw.mse; }),
          mean_over(rows, [](const RepResult& r) { return r.raw.mae; }),
          mean_over(rows, [](const RepResult& r) { return r.raw.r2; })};
}

MethodMetrics ComparisonTable::mean_stein() const {
  return {mean_over(rows, [](const RepResult& r) { return r.stein.mse; }),
          mean_over(rows, [](const RepResult& r) { return r.stein.mae; }),
          mean_over(rows, [](const RepResult& r) { return r.stein.r2; })};
}

MethodMetrics ComparisonTable::mean_pca() const {
  return {mean_over(rows, [](const RepResult& r) { return r.pca.mse; }),
          mean_over(rows, [](const RepResult& r) { return r.pca.mae; }),
          mean_over(rows, [](const RepResult& r) { return r.pca.r2; })};
}

ComparisonTable run_comparison(const SimConfig& sim, const PipelineConfig& pipe,
                               const MlpSpec& mlp, int threads, bool fit_only) {
  sim.validate();
  ComparisonTable table;
  table.config = sim;
  table.rows.resize(static_cast<std::size_t>(sim.replications));

  parallel_for(sim.replications, threads, [&](Index rep) {
    RepResult& row = table.rows[static_cast<std::size_t>(rep)];
    row.rep = static_cast<int>(rep);
    try {
      const ScenarioData data = generate(sim, static_cast<int>(rep));

      PipelineConfig pcfg = pipe;
      pcfg.seed = mix_seed(pipe.seed ^ sim.base_seed, static_cast<std::uint64_t>(rep));
      pcfg.threads = 1;  // outer pool owns the parallelism
      const FitReport report = fit(data.train, pcfg);

      const SignAlignment align = align_sign(report.fit.gamma, data.gamma);
      row.angle_deg = align.angle_deg;
      row.proj_loss = align.proj_loss;
      row.aligned_err = align.err;
      row.order = report.fit.order;
      row.probe = report.fit.probe.label();
      row.fallback = report.fit.fallback_used;

      if (!fit_only) {
        const Vector t_train = encode(report.fit, data.train.z);
        const Vector t_test = encode(report.fit, data.test.z);

        const Matrix xs_train = standardize_block(data.train.x, data.train.x);
        const Matrix xs_test = standardize_block(data.train.x, data.test.x);
        const Matrix zs_train = standardize_block(data.train.z, data.train.z);
        const Matrix zs_test = standardize_block(data.train.z, data.test.z);

        const ColumnScale t_scale = scale_of(t_train);
        const Vector ts_train = standardize_with(t_train, t_scale);
        const Vector ts_test = standardize_with(t_test, t_scale);

        const Pc1 pc = fit_pc1(data.train.z);
        const Vector pc_train_raw = pc1_scores(pc, data.train.z);
        const Vector pc_test_raw = pc1_scores(pc, data.test.z);
        const ColumnScale pc_scale = scale_of(pc_train_raw);
        const Vector pc_train = standardize_with(pc_train_raw, pc_scale);
        const Vector pc_test = standardize_with(pc_test_raw, pc_scale);

        const ColumnScale y_scale = scale_of(data.train.y);
        const Vector ys_train = standardize_with(data.train.y, y_scale);
        auto unscale = [&](const Vector& v) {
          return Vector(v.array() * y_scale.sd + y_scale.mean);
        };

        // Identical spec for every method except the input width inferred
        // from the features; the residual stage gets its own seed stream.
        MlpSpec spec = mlp;
        spec.seed = mix_seed(mlp.seed ^ sim.base_seed, 2 * rep + 0);
        MlpSpec spec_resid = mlp;
        spec_resid.seed = mix_seed(mlp.seed ^ sim.base_seed, 2 * rep + 1);

        Matrix f_raw_train(data.train.n(), xs_train.cols() + zs_train.cols());
        f_raw_train << xs_train, zs_train;
        Matrix f_raw_test(data.test.n(), xs_test.cols() + zs_test.cols());
        f_raw_test << xs_test, zs_test;
        const MlpModel model_raw = train(f_raw_train, ys_train, spec);
        row.raw = metrics(data.test.y, unscale(model_raw.predict(f_raw_test)));

        const SafeguardedModel model_stein = fit_with_safeguard(
            xs_train, zs_train, ts_train, ys_train, spec, spec_resid);
        row.alpha = model_stein.alpha;
        row.stein = metrics(
            data.test.y, unscale(predict(model_stein, xs_test, ts_test, zs_test)));

        Matrix f_pc_train(data.train.n(), xs_train.cols() + 1);
        f_pc_train << xs_train, pc_train;
        Matrix f_pc_test(data.test.n(), xs_test.cols() + 1);
        f_pc_test << xs_test, pc_test;
        const MlpModel model_pc = train(f_pc_train, ys_train, spec);
        row.pca = metrics(data.test.y, unscale(model_pc.predict(f_pc_test)));
      }
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
  });

  return table;
}

BenchmarkResult run_file_benchmark(const Dataset& d, const BenchmarkOptions& opt,
                                   const PipelineConfig& pipe,
                                   const MlpSpec& mlp) {
  Dataset base = d;
  if (opt.top_features > 0 && opt.top_features < d.q()) {
    const std::vector<Index> keep = variance_prescreen(d.z, opt.top_features);
    base = select_features(d, keep);
  }

  const std::vector<FoldSplit> splits = kfold_split(base.n(), opt.folds, opt.seed);
  BenchmarkResult result;
  result.folds.resize(splits.size());
  std::vector<std::vector<std::string>> fold_top(splits.size());

  parallel_for(static_cast<Index>(splits.size()), opt.threads, [&](Index f) {
    const Dataset train_d = take_rows(base, splits[static_cast<std::size_t>(f)].train);
    const Dataset test_d = take_rows(base, splits[static_cast<std::size_t>(f)].test);

    auto [train_s, params] = standardize(train_d, true);

    // Place the held-out fold on the training scale, matching columns by
    // the names that survived standardization.
    auto col_index = [](const std::vector<std::string>& names,
                        const std::string& name) {
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end())
        throw std::runtime_error("benchmark: column lost between folds: " + name);
      return static_cast<Index>(it - names.begin());
    };
    Matrix x_test(test_d.n(), train_s.p());
    for (Index c = 0; c < train_s.p(); ++c) {
      const Index src = col_index(test_d.names_x, train_s.names_x[static_cast<std::size_t>(c)]);
      x_test.col(c) = (test_d.x.col(src).array() - params.mean_x[c]) / params.sd_x[c];
    }
    Matrix z_test(test_d.n(), train_s.q());
    for (Index c = 0; c < train_s.q(); ++c) {
      const Index src = col_index(test_d.names_z, train_s.names_z[static_cast<std::size_t>(c)]);
      z_test.col(c) = (test_d.z.col(src).array() - params.mean_z[c]) / params.sd_z[c];
    }

    PipelineConfig pcfg = pipe;
    pcfg.seed = mix_seed(pipe.seed, 100 + static_cast<std::uint64_t>(f));
    pcfg.threads = 1;
    const FitReport report = fit(train_s, pcfg);

    const Vector t_train = encode(report.fit, train_s.z);
    const Vector t_test = encode(report.fit, z_test);
    const ColumnScale t_scale = scale_of(t_train);
    const Vector ts_train = standardize_with(t_train, t_scale);
    const Vector ts_test = standardize_with(t_test, t_scale);

    const Pc1 pc = fit_pc1(train_s.z);
    const Vector pc_train_raw = pc1_scores(pc, train_s.z);
    const Vector pc_test_raw = pc1_scores(pc, z_test);
    const ColumnScale pc_scale = scale_of(pc_train_raw);
    const Vector pc_train = standardize_with(pc_train_raw, pc_scale);
    const Vector pc_test = standardize_with(pc_test_raw, pc_scale);

    auto unscale = [&](const Vector& v) {
      return Vector(v.array() * params.sd_y + params.mean_y);
    };

    FoldRow& row = result.folds[static_cast<std::size_t>(f)];
    row.fold = static_cast<int>(f);
    row.order = report.fit.order;
    row.probe = report.fit.probe.label();
    row.angle_vs_pc1 = align_sign(report.fit.gamma, pc.loadings).angle_deg;

    MlpSpec spec = mlp;
    spec.seed = mix_seed(mlp.seed, 2 * static_cast<std::uint64_t>(f) + 0);
    MlpSpec spec_resid = mlp;
    spec_resid.seed = mix_seed(mlp.seed, 2 * static_cast<std::uint64_t>(f) + 1);

    Matrix f_raw_train(train_s.n(), train_s.p() + train_s.q());
    f_raw_train << train_s.x, train_s.z;
    Matrix f_raw_test(test_d.n(), train_s.p() + train_s.q());
    f_raw_test << x_test, z_test;
    const MlpModel model_raw = train(f_raw_train, train_s.y, spec);
    row.raw = metrics(test_d.y, unscale(model_raw.predict(f_raw_test)));

    Matrix f_pc_train(train_s.n(), train_s.p() + 1);
    f_pc_train << train_s.x, pc_train;
    Matrix f_pc_test(test_d.n(), train_s.p() + 1);
    f_pc_test << x_test, pc_test;
    const MlpModel model_pc = train(f_pc_train, train_s.y, spec);
    row.pca = metrics(test_d.y, unscale(model_pc.predict(f_pc_test)));

    const SafeguardedModel model_stein = fit_with_safeguard(
        train_s.x, train_s.z, ts_train, train_s.y, spec, spec_resid);
    row.stein =
        metrics(test_d.y, unscale(predict(model_stein, x_test, ts_test, z_test)));

    // Top coefficients by magnitude (feature-name table).
    std::vector<Index> idx(static_cast<std::size_t>(train_s.q()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
      return std::abs(report.fit.gamma[a]) > std::abs(report.fit.gamma[b]);
    });
    const std::size_t top = std::min<std::size_t>(20, idx.size());
    for (std::size_t i = 0; i < top; ++i)
      fold_top[static_cast<std::size_t>(f)].push_back(
          train_s.names_z[static_cast<std::size_t>(idx[i])]);
  });

  auto mean_of = [&](const std::function<MethodMetrics(const FoldRow&)>& get) {
    MethodMetrics m{0.0, 0.0, 0.0};
    for (const auto& row : result.folds) {
      const MethodMetrics v = get(row);
      m.mse += v.mse;
      m.mae += v.mae;
      m.r2 += v.r2;
    }
    const double k = static_cast<double>(result.folds.size());
    return MethodMetrics{m.mse / k, m.mae / k, m.r2 / k};
  };
  result.mean_raw = mean_of([](const FoldRow& r) { return r.raw; });
  result.mean_pca = mean_of([](const FoldRow& r) { return r.pca; });
  result.mean_stein = mean_of([](const FoldRow& r) { return r.stein; });
  result.top_features = fold_top.back();
  return result;
}

}  // namespace stein
