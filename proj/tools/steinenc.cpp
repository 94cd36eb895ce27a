// Command-line front end: simulate (synthetic method comparisons), fit
// (estimate an encoder from a delimited file), encode / predict (apply
// saved artifacts to new data), benchmark (k-fold method comparison on a
// file).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "stein/data.hpp"
#include "stein/experiments.hpp"
#include "stein/parallel.hpp"
#include "stein/pipeline.hpp"
#include "stein/regressor.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stein;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is required");
  if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int default_threads() {
  if (const char* env = std::getenv("STEINENC_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return hardware_threads();
}

struct PipelineFlags {
  std::string regime = "auto";
  Index sparsity = 0;
  std::vector<double> scales;
  std::string tau_mode = "permutation";
  std::string null_scheme = "combined";
  double tau1 = 0.0, tau2 = 0.0;
  int permutations = 50;
  double c_a = 0.5, c_omega = 0.5;
  bool threshold_original = false;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--regime", regime, "Fit regime: auto, low or high")
        ->check(CLI::IsMember({"auto", "low", "high"}));
    cmd->add_option("--sparsity", sparsity,
                    "Sparsity level s (0 = default rule)");
    cmd->add_option("--scales", scales,
                    "Probe scale grid (default 0.1 0.5 1.0)");
    cmd->add_option("--tau-mode", tau_mode, "permutation or fixed")
        ->check(CLI::IsMember({"permutation", "fixed"}));
    cmd->add_option("--null-scheme", null_scheme,
                    "Calibration null: combined, permutation or signflip")
        ->check(CLI::IsMember({"combined", "permutation", "signflip"}));
    cmd->add_option("--tau1", tau1, "Fixed first-order threshold");
    cmd->add_option("--tau2", tau2, "Fixed second-order threshold");
    cmd->add_option("--perms", permutations,
                    "Permutations for threshold calibration");
    cmd->add_option("--c-a", c_a, "Coefficient-penalty constant");
    cmd->add_option("--c-omega", c_omega, "Precision-penalty constant");
    cmd->add_flag("--threshold-original", threshold_original,
                  "Order-2 sparse recovery thresholds in the original basis "
                  "only");
  }

  PipelineConfig build(std::uint64_t seed, int threads) const {
    PipelineConfig cfg;
    cfg.regime = regime == "low"
                     ? RegimeChoice::Low
                     : (regime == "high" ? RegimeChoice::High
                                         : RegimeChoice::Auto);
    cfg.s = sparsity;
    if (!scales.empty()) cfg.probe_scales = scales;
    cfg.tau_mode =
        tau_mode == "fixed" ? TauMode::Fixed : TauMode::Permutation;
    cfg.null_scheme = null_scheme == "permutation"
                          ? NullScheme::Permutation
                          : (null_scheme == "signflip" ? NullScheme::SignFlip
                                                       : NullScheme::Combined);
    cfg.tau1 = tau1;
    cfg.tau2 = tau2;
    cfg.permutations = permutations;
    cfg.c_a = c_a;
    cfg.c_omega = c_omega;
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.threshold_whitened = !threshold_original;
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    return cfg;
  }
};

struct MlpFlags {
  std::vector<Index> hidden = {128, 128, 128};
  bool no_batch_norm = false;
  double dropout = 0.1;
  int epochs = 300;
  Index batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  int patience = 20;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "Hidden layer widths");
    cmd->add_flag("--no-batch-norm", no_batch_norm, "Disable batch norm");
    cmd->add_option("--dropout", dropout, "Dropout rate");
    cmd->add_option("--epochs", epochs, "Max training epochs");
    cmd->add_option("--batch-size", batch_size, "Minibatch size");
    cmd->add_option("--lr", learning_rate, "Learning rate");
    cmd->add_option("--weight-decay", weight_decay, "Weight decay");
    cmd->add_option("--patience", patience, "Early-stop patience");
  }

  MlpSpec build(std::uint64_t seed) const {
    MlpSpec spec;
    spec.input_dim = 1;  // set by train() from the features
    spec.hidden = hidden;
    spec.batch_norm = !no_batch_norm;
    spec.dropout = dropout;
    spec.epochs = epochs;
    spec.batch_size = batch_size;
    spec.learning_rate = learning_rate;
    spec.weight_decay = weight_decay;
    spec.patience = patience;
    spec.seed = seed;
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    return spec;
  }
};

json metrics_json(const MethodMetrics& m) {
  return json{{"mse", m.mse}, {"mae", m.mae}, {"r2", m.r2}};
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const std::string& model, const std::string& setting, Index p,
                 Index q, Index n_train, Index n_test, int reps, bool sparse_a,
                 Index s_a, const PipelineFlags& pf, const MlpFlags& mf,
                 std::uint64_t seed, int threads, bool fit_only,
                 const std::string& out_dir) {
  SimConfig sim;
  sim.model = link_model_from_name(model);
  sim.setting = feature_setting_from_name(setting);
  sim.p = p;
  sim.q = q;
  sim.n_train = n_train;
  sim.n_test = n_test;
  sim.replications = reps;
  sim.base_seed = seed;
  sim.sparse_a = sparse_a;
  sim.s_a = s_a;
  try {
    sim.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const PipelineConfig pipe = pf.build(seed, 1);
  const MlpSpec mlp = mf.build(seed);

  fs::create_directories(out_dir);
  const ComparisonTable table =
      run_comparison(sim, pipe, mlp, threads, fit_only);

  // Per-replication table.
  std::string csv =
      "rep,ok,angle_deg,proj_loss,aligned_err,order,probe,fallback,alpha,"
      "mse_a,mae_a,r2_a,mse_b,mae_b,r2_b,mse_c,mae_c,r2_c\n";
  for (const auto& r : table.rows) {
    csv += std::to_string(r.rep) + "," + (r.ok ? "1" : "0") + "," +
           fmt(r.angle_deg) + "," + fmt(r.proj_loss) + "," +
           fmt(r.aligned_err) + "," + std::to_string(r.order) + "," + r.probe +
           "," + (r.fallback ? "1" : "0") + "," + std::to_string(r.alpha) +
           "," + fmt(r.raw.mse) + "," + fmt(r.raw.mae) + "," + fmt(r.raw.r2) +
           "," + fmt(r.stein.mse) + "," + fmt(r.stein.mae) + "," +
           fmt(r.stein.r2) + "," + fmt(r.pca.mse) + "," + fmt(r.pca.mae) +
           "," + fmt(r.pca.r2) + "\n";
  }
  write_text(fs::path(out_dir) / "replications.csv", csv);

  json jrows = json::array();
  for (const auto& r : table.rows)
    jrows.push_back(json{{"rep", r.rep},
                         {"ok", r.ok},
                         {"error", r.error},
                         {"angle_deg", r.angle_deg},
                         {"proj_loss", r.proj_loss},
                         {"aligned_err", r.aligned_err},
                         {"order", r.order},
                         {"probe", r.probe},
                         {"fallback", r.fallback},
                         {"alpha", r.alpha},
                         {"method_a", metrics_json(r.raw)},
                         {"method_b", metrics_json(r.stein)},
                         {"method_c", metrics_json(r.pca)}});
  json report{
      {"config",
       json{{"model", model},
            {"setting", setting},
            {"p", p},
            {"q", q},
            {"n_train", n_train},
            {"n_test", n_test},
            {"replications", reps},
            {"sparse_a", sparse_a},
            {"s_a", s_a},
            {"seed", seed},
            {"fit_only", fit_only},
            {"pipeline", json::parse(pipe.to_json())},
            {"mlp", json::parse(mlp.to_json())}}},
      {"replications", jrows},
      {"aggregate", json{{"n_ok", table.n_ok()},
                         {"mean_angle_deg", table.mean_angle()},
                         {"mean_proj_loss", table.mean_proj()},
                         {"median_aligned_err", table.median_aligned_err()},
                         {"method_a", metrics_json(table.mean_raw())},
                         {"method_b", metrics_json(table.mean_stein())},
                         {"method_c", metrics_json(table.mean_pca())}}}};
  write_text(fs::path(out_dir) / "simulation_report.json", report.dump(2));

  char line[256];
  std::string summary;
  summary += "model " + model + " setting " + setting + " (p,q)=(" +
             std::to_string(p) + "," + std::to_string(q) + ") n_train=" +
             std::to_string(n_train) + " reps=" + std::to_string(reps) + "\n";
  std::snprintf(line, sizeof line, "mean angle(proj): %.3f(%.3f)\n",
                table.mean_angle(), table.mean_proj());
  summary += line;
  if (!fit_only) {
    const MethodMetrics a = table.mean_raw(), b = table.mean_stein(),
                        c = table.mean_pca();
    std::snprintf(line, sizeof line, "%-28s %10s %10s\n", "method", "MSE",
                  "R2");
    summary += line;
    std::snprintf(line, sizeof line, "%-28s %10.3f %10.3f\n",
                  "A: network on [x, z]", a.mse, a.r2);
    summary += line;
    std::snprintf(line, sizeof line, "%-28s %10.3f %10.3f\n",
                  "B: network on [x, t_hat]", b.mse, b.r2);
    summary += line;
    std::snprintf(line, sizeof line, "%-28s %10.3f %10.3f\n",
                  "C: network on [x, pc1(z)]", c.mse, c.r2);
    summary += line;
  }
  write_text(fs::path(out_dir) / "summary.txt", summary);
  std::cout << summary;
  return 0;
}

// ---------------------------------------------------------------------------
// fit

json fit_artifact(const FitReport& report, const Dataset& data_std,
                  const ScalingParams& scaling, const TableEncoding& encoding,
                  const ColumnManifest& manifest, const PipelineConfig& pipe) {
  // Feature names ranked by coefficient magnitude.
  std::vector<Index> order(static_cast<std::size_t>(data_std.q()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return std::abs(report.fit.gamma[a]) > std::abs(report.fit.gamma[b]);
  });
  json top = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(20, order.size()); ++i) {
    const Index j = order[i];
    top.push_back(json{{"name", data_std.names_z[static_cast<std::size_t>(j)]},
                       {"coefficient", report.fit.gamma[j]}});
  }
  return json{{"report", json::parse(report.to_json())},
              {"notes",
               json::array({"missing cells were mean-imputed by the loader",
                            "categorical columns integer-encoded by first "
                            "appearance"})},
              {"feature_names", data_std.names_z},
              {"nuisance_names", data_std.names_x},
              {"scaling", json::parse(scaling.to_json())},
              {"encoding", json::parse(encoding.to_json())},
              {"manifest", json::parse(manifest.to_json())},
              {"top_features", top},
              {"pipeline_config", json::parse(pipe.to_json())}};
}

struct LoadedArtifact {
  FitReport report;
  std::vector<std::string> names_x, names_z;
  ScalingParams scaling;
  TableEncoding encoding;
  ColumnManifest manifest;
};

LoadedArtifact load_artifact(const std::string& path) {
  require_file(path, "fit report");
  std::ifstream in(path);
  json j;
  try {
    in >> j;
    LoadedArtifact a;
    a.report = FitReport::from_json(j.at("report").dump());
    a.names_x = j.at("nuisance_names").get<std::vector<std::string>>();
    a.names_z = j.at("feature_names").get<std::vector<std::string>>();
    a.scaling = ScalingParams::from_json(j.at("scaling").dump());
    a.encoding = TableEncoding::from_json(j.at("encoding").dump());
    a.manifest = ColumnManifest::from_json(j.at("manifest").dump());
    return a;
  } catch (const json::exception& e) {
    throw ConfigError("malformed fit report " + path + ": " + e.what());
  }
}

struct ScoredData {
  Dataset raw;
  Matrix x_std, z_std;
  Vector t_hat;
};

ScoredData score_data(const LoadedArtifact& art, const std::string& data_path,
                      char delimiter) {
  require_file(data_path, "data file");
  ScoredData s;
  try {
    s.raw = load_for_scoring(data_path, art.manifest.response, art.names_x,
                             art.names_z, art.encoding, art.scaling.mean_x,
                             art.scaling.mean_z, delimiter);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("incompatible data file: ") + e.what());
  }
  const Index n = s.raw.n();
  s.x_std.resize(n, s.raw.p());
  for (Index c = 0; c < s.raw.p(); ++c)
    s.x_std.col(c) = (s.raw.x.col(c).array() - art.scaling.mean_x[c]) /
                     art.scaling.sd_x[c];
  s.z_std.resize(n, s.raw.q());
  for (Index c = 0; c < s.raw.q(); ++c)
    s.z_std.col(c) = (s.raw.z.col(c).array() - art.scaling.mean_z[c]) /
                     art.scaling.sd_z[c];
  if (s.z_std.cols() != art.report.fit.gamma.size())
    throw ConfigError("feature dimension mismatch between report and data");
  s.t_hat = encode(art.report.fit, s.z_std);
  return s;
}

int cmd_fit(const std::string& data_path, const std::string& manifest_path,
            char delimiter, Index top_genes, const PipelineFlags& pf,
            const MlpFlags& mf, bool train_mlp, bool emit_plot_data,
            std::uint64_t seed, int threads, const std::string& out_dir) {
  require_file(data_path, "data file");
  require_file(manifest_path, "manifest");
  ColumnManifest manifest;
  try {
    manifest = ColumnManifest::from_file(manifest_path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  TableEncoding encoding;
  Dataset raw = load_table(data_path, manifest, delimiter, &encoding);
  if (top_genes > 0) {
    if (top_genes > raw.q())
      throw ConfigError("--top-genes exceeds available feature columns");
    raw = select_features(raw, variance_prescreen(raw.z, top_genes));
  }
  auto [data_std, scaling] = standardize(raw, true);

  const PipelineConfig pipe = pf.build(seed, threads);
  const FitReport report = fit(data_std, pipe);

  fs::create_directories(out_dir);
  const json artifact =
      fit_artifact(report, data_std, scaling, encoding, manifest, pipe);
  write_text(fs::path(out_dir) / "fit_report.json", artifact.dump(2));

  std::string top_txt;
  for (const auto& row : artifact.at("top_features"))
    top_txt += row.at("name").get<std::string>() + "\n";
  write_text(fs::path(out_dir) / "top_features.txt", top_txt);

  std::cout << "regime " << regime_name(report.fit.regime) << ", selected "
            << (report.fit.fallback_used ? "fallback " : "") << "order "
            << report.fit.order << " probe " << report.fit.probe.label()
            << ", strength " << report.fit.strength << " (tau1 " << report.tau1
            << ", tau2 " << report.tau2 << ")\n"
            << "report written to " << out_dir << "/fit_report.json\n";

  const Vector t_train = encode(report.fit, data_std.z);
  const double t_mean = t_train.mean();
  const double t_sd = std::sqrt(
      (t_train.array() - t_mean).square().sum() /
      static_cast<double>(std::max<Index>(t_train.size() - 1, 1)));

  if (train_mlp) {
    const Vector ts = (t_train.array() - t_mean) / (t_sd > 0 ? t_sd : 1.0);
    MlpSpec spec_main = mf.build(mix_seed(seed, 1));
    MlpSpec spec_resid = mf.build(mix_seed(seed, 2));
    const SafeguardedModel model = fit_with_safeguard(
        data_std.x, data_std.z, ts, data_std.y, spec_main, spec_resid);
    model.save((fs::path(out_dir) / "model.bin").string());
    json meta{{"t_mean", t_mean},
              {"t_sd", t_sd > 0 ? t_sd : 1.0},
              {"alpha", model.alpha},
              {"val_mse_main", model.val_mse_main},
              {"val_mse_combined", model.val_mse_combined}};
    write_text(fs::path(out_dir) / "model_meta.json", meta.dump(2));
    std::cout << "downstream model written (alpha = " << model.alpha << ")\n";
  }

  if (emit_plot_data) {
    const Pc1 pc = fit_pc1(data_std.z);
    const Vector pc1 = pc1_scores(pc, data_std.z);
    std::string csv = "y,t_hat,pc1\n";
    for (Index i = 0; i < raw.n(); ++i)
      csv += fmt(raw.y[i]) + "," + fmt(t_train[i]) + "," + fmt(pc1[i]) + "\n";
    write_text(fs::path(out_dir) / "plot_data.csv", csv);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// encode / predict

int cmd_encode(const std::string& fit_path, const std::string& data_path,
               char delimiter, const std::string& out_path) {
  const LoadedArtifact art = load_artifact(fit_path);
  const ScoredData s = score_data(art, data_path, delimiter);
  std::string csv = "t_hat\n";
  for (Index i = 0; i < s.t_hat.size(); ++i) csv += fmt(s.t_hat[i]) + "\n";
  write_text(out_path, csv);
  std::cout << "wrote " << s.t_hat.size() << " rows to " << out_path << "\n";
  return 0;
}

int cmd_predict(const std::string& fit_path, const std::string& model_path,
                const std::string& data_path, char delimiter,
                const std::string& out_path) {
  const LoadedArtifact art = load_artifact(fit_path);
  require_file(model_path, "model");
  const fs::path meta_path =
      fs::path(model_path).parent_path() / "model_meta.json";
  require_file(meta_path.string(), "model metadata");

  SafeguardedModel model;
  double t_mean = 0.0, t_sd = 1.0;
  try {
    model = SafeguardedModel::load(model_path);
    std::ifstream meta_in(meta_path);
    json meta;
    meta_in >> meta;
    t_mean = meta.at("t_mean").get<double>();
    t_sd = meta.at("t_sd").get<double>();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("incompatible model artifact: ") + e.what());
  }

  const ScoredData s = score_data(art, data_path, delimiter);
  Vector pred(0);
  if (s.raw.n() > 0) {
    const Vector ts = (s.t_hat.array() - t_mean) / t_sd;
    try {
      pred = predict(model, s.x_std, ts, s.z_std);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("incompatible model artifact: ") +
                        e.what());
    }
    pred = pred.array() * art.scaling.sd_y + art.scaling.mean_y;
  }
  std::string csv = "prediction\n";
  for (Index i = 0; i < pred.size(); ++i) csv += fmt(pred[i]) + "\n";
  write_text(out_path, csv);
  std::cout << "wrote " << pred.size() << " rows to " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

int cmd_benchmark(const std::string& data_path,
                  const std::string& manifest_path, char delimiter, int folds,
                  Index top_genes, const PipelineFlags& pf, const MlpFlags& mf,
                  std::uint64_t seed, int threads, const std::string& out_dir) {
  require_file(data_path, "data file");
  require_file(manifest_path, "manifest");
  ColumnManifest manifest;
  try {
    manifest = ColumnManifest::from_file(manifest_path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (folds < 2) throw ConfigError("--folds must be at least 2");

  const Dataset raw = load_table(data_path, manifest, delimiter);
  BenchmarkOptions opt;
  opt.folds = folds;
  opt.top_features = top_genes;
  opt.seed = seed;
  opt.threads = threads;
  const PipelineConfig pipe = pf.build(seed, 1);
  const MlpSpec mlp = mf.build(seed);
  const BenchmarkResult result = run_file_benchmark(raw, opt, pipe, mlp);

  fs::create_directories(out_dir);
  json jfolds = json::array();
  for (const auto& f : result.folds)
    jfolds.push_back(json{{"fold", f.fold},
                          {"order", f.order},
                          {"probe", f.probe},
                          {"angle_vs_pc1_deg", f.angle_vs_pc1},
                          {"method_a_standard", metrics_json(f.raw)},
                          {"method_b_pca", metrics_json(f.pca)},
                          {"method_c_stein", metrics_json(f.stein)}});
  json report{
      {"config", json{{"folds", folds},
                      {"top_genes", top_genes},
                      {"seed", seed},
                      {"pipeline", json::parse(pipe.to_json())},
                      {"mlp", json::parse(mlp.to_json())}}},
      {"folds", jfolds},
      {"mean", json{{"method_a_standard", metrics_json(result.mean_raw)},
                    {"method_b_pca", metrics_json(result.mean_pca)},
                    {"method_c_stein", metrics_json(result.mean_stein)}}},
      {"top_features", result.top_features}};
  write_text(fs::path(out_dir) / "benchmark_report.json", report.dump(2));

  char line[256];
  std::string summary;
  std::snprintf(line, sizeof line, "%-24s %12s %12s %12s\n", "method", "MSE",
                "MAE", "R2");
  summary += line;
  auto add = [&](const char* name, const MethodMetrics& m) {
    std::snprintf(line, sizeof line, "%-24s %12.3f %12.3f %12.3f\n", name,
                  m.mse, m.mae, m.r2);
    summary += line;
  };
  add("A: standard [x, z]", result.mean_raw);
  add("B: pca [x, pc1]", result.mean_pca);
  add("C: stein [x, t_hat]", result.mean_stein);
  write_text(fs::path(out_dir) / "summary.txt", summary);
  std::cout << summary;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supervised linear encoder for multi-modal tabular data"};
  app.require_subcommand(1);
  app.set_config("--config");

  std::uint64_t seed = 1;
  int threads = default_threads();
  app.add_option("--seed", seed, "Base random seed");
  app.add_option("--threads", threads, "Worker threads");

  // simulate
  auto* sim = app.add_subcommand("simulate",
                                 "Run a synthetic method comparison");
  sim->fallthrough();
  std::string sim_model = "I", sim_setting = "indep", sim_out = "sim_out";
  Index sim_p = 20, sim_q = 20, sim_ntrain = 2000, sim_ntest = 2000,
        sim_sa = 10;
  int sim_reps = 20;
  bool sim_sparse_a = false, sim_fit_only = false;
  sim->add_option("--model", sim_model, "Link model: I, II or III");
  sim->add_option("--setting", sim_setting, "indep or corr");
  sim->add_option("--p", sim_p, "Nuisance dimension");
  sim->add_option("--q", sim_q, "Feature dimension");
  sim->add_option("--n-train", sim_ntrain, "Training rows");
  sim->add_option("--n-test", sim_ntest, "Test rows");
  sim->add_option("--reps", sim_reps, "Replications");
  sim->add_flag("--sparse-a", sim_sparse_a,
                "Sparse coefficient rows in the correlated setting");
  sim->add_option("--s-a", sim_sa, "Nonzeros per sparse coefficient row");
  sim->add_flag("--fit-only", sim_fit_only,
                "Skip the networks; report direction recovery only");
  sim->add_option("--out", sim_out, "Output directory");
  PipelineFlags sim_pf;
  sim_pf.add_options(sim);
  MlpFlags sim_mf;
  sim_mf.add_options(sim);

  // fit
  auto* fitc =
      app.add_subcommand("fit", "Fit an encoder from a delimited file");
  fitc->fallthrough();
  std::string fit_data, fit_manifest, fit_out = "fit_out";
  bool fit_tsv = false, fit_train_mlp = false, fit_plot = false;
  Index fit_top = 0;
  fitc->add_option("--data", fit_data, "Input data file");
  fitc->add_option("--manifest", fit_manifest, "Column manifest (JSON)");
  fitc->add_flag("--tsv", fit_tsv, "Tab-delimited input");
  fitc->add_option("--top-genes", fit_top,
                   "Keep the K highest-variance feature columns");
  fitc->add_flag("--train-mlp", fit_train_mlp,
                 "Also train and save the downstream network");
  fitc->add_flag("--emit-plot-data", fit_plot,
                 "Write response-vs-index scatter data");
  fitc->add_option("--out", fit_out, "Output directory");
  PipelineFlags fit_pf;
  fit_pf.add_options(fitc);
  MlpFlags fit_mf;
  fit_mf.add_options(fitc);

  // encode
  auto* enc =
      app.add_subcommand("encode", "Apply a saved encoder to new data");
  enc->fallthrough();
  std::string enc_fit, enc_data, enc_out = "t_hat.csv";
  bool enc_tsv = false;
  enc->add_option("--fit", enc_fit, "fit_report.json from a prior fit");
  enc->add_option("--data", enc_data, "Input data file");
  enc->add_flag("--tsv", enc_tsv, "Tab-delimited input");
  enc->add_option("--out", enc_out, "Output CSV path");

  // predict
  auto* pred = app.add_subcommand(
      "predict", "Apply a saved encoder and network to new data");
  pred->fallthrough();
  std::string pred_fit, pred_model, pred_data, pred_out = "predictions.csv";
  bool pred_tsv = false;
  pred->add_option("--fit", pred_fit, "fit_report.json from a prior fit");
  pred->add_option("--model", pred_model, "model.bin from a prior fit");
  pred->add_option("--data", pred_data, "Input data file");
  pred->add_flag("--tsv", pred_tsv, "Tab-delimited input");
  pred->add_option("--out", pred_out, "Output CSV path");

  // benchmark
  auto* bench = app.add_subcommand(
      "benchmark", "K-fold method comparison on a delimited file");
  bench->fallthrough();
  std::string bench_data, bench_manifest, bench_out = "benchmark_out";
  bool bench_tsv = false;
  int bench_folds = 5;
  Index bench_top = 0;
  bench->add_option("--data", bench_data, "Input data file");
  bench->add_option("--manifest", bench_manifest, "Column manifest (JSON)");
  bench->add_flag("--tsv", bench_tsv, "Tab-delimited input");
  bench->add_option("--folds", bench_folds, "Cross-validation folds");
  bench->add_option("--top-genes", bench_top,
                    "Keep the K highest-variance feature columns");
  bench->add_option("--out", bench_out, "Output directory");
  PipelineFlags bench_pf;
  bench_pf.add_options(bench);
  MlpFlags bench_mf;
  bench_mf.add_options(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(sim_model, sim_setting, sim_p, sim_q, sim_ntrain,
                          sim_ntest, sim_reps, sim_sparse_a, sim_sa, sim_pf,
                          sim_mf, seed, threads, sim_fit_only, sim_out);
    if (fitc->parsed())
      return cmd_fit(fit_data, fit_manifest, fit_tsv ? '\t' : ',', fit_top,
                     fit_pf, fit_mf, fit_train_mlp, fit_plot, seed, threads,
                     fit_out);
    if (enc->parsed())
      return cmd_encode(enc_fit, enc_data, enc_tsv ? '\t' : ',', enc_out);
    if (pred->parsed())
      return cmd_predict(pred_fit, pred_model, pred_data,
                         pred_tsv ? '\t' : ',', pred_out);
    if (bench->parsed())
      return cmd_benchmark(bench_data, bench_manifest, bench_tsv ? '\t' : ',',
                           bench_folds, bench_top, bench_pf, bench_mf, seed,
                           threads, bench_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
