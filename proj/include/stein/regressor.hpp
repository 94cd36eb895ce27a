#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stein/types.hpp"

namespace stein {

/// Feedforward regression network: per hidden layer a dense affine map,
/// optional batch normalization, SiLU activation and dropout, then a
/// linear output unit. Trained with minibatch gradient descent using a
/// momentumless adaptive-moment update (second-moment scaling only).
struct MlpSpec {
  Index input_dim = 0;
  std::vector<Index> hidden = {128, 128, 128};
  bool batch_norm = true;
  double dropout = 0.1;
  int epochs = 300;
  Index batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  int patience = 20;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static MlpSpec from_json(const std::string& text);
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
};

class MlpModel {
 public:
  MlpModel() = default;

  /// Fresh model with seeded weight initialization.
  static MlpModel init(const MlpSpec& spec);

  /// Deterministic evaluation-mode forward pass (dropout off, batch norm
  /// on running statistics). One prediction per row of features.
  Vector predict(const Matrix& features) const;

  const MlpSpec& spec() const { return spec_; }
  const TrainHistory& history() const { return history_; }

  void save(const std::string& path) const;
  static MlpModel load(const std::string& path);

  /// Flat views over every trainable parameter, in a fixed order.
  std::vector<double*> parameters();
  std::vector<const double*> parameters() const;

  struct Layer {
    Matrix w;  // out x in
    Vector b;
    // batch norm state (only used when spec.batch_norm and not output layer)
    Vector bn_gamma, bn_beta, bn_run_mean, bn_run_var;
  };
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  friend MlpModel train(const Matrix&, const Vector&, const MlpSpec&);

  MlpSpec spec_;
  std::vector<Layer> layers_;
  TrainHistory history_;
};

/// Minimizes mean squared error with a 10% validation split for early
/// stopping; restores the best-validation parameters. Deterministic given
/// spec.seed. Throws if the training loss becomes non-finite.
MlpModel train(const Matrix& features, const Vector& y, const MlpSpec& spec);

Vector predict(const MlpModel& model, const Matrix& features);

/// Max relative error between analytic gradients and central finite
/// differences (step 1e-5) over a random sample of up to n_params
/// parameters, in evaluation mode.
double gradient_check(const MlpModel& model, const Matrix& features,
                      const Vector& y, int n_params = 100,
                      std::uint64_t seed = 1);

/// Two-stage predictor: a main network on [x, t_hat] plus a residual
/// network on [x, z] fit to the stage-1 residuals, kept (alpha = 1) only
/// when it improves validation MSE by at least 1%.
struct SafeguardedModel {
  MlpModel main;
  MlpModel residual;
  int alpha = 0;
  double val_mse_main = 0.0;
  double val_mse_combined = 0.0;

  void save(const std::string& path) const;
  static SafeguardedModel load(const std::string& path);
};

SafeguardedModel fit_with_safeguard(const Matrix& x, const Matrix& z,
                                    const Vector& t_hat, const Vector& y,
                                    const MlpSpec& spec_main,
                                    const MlpSpec& spec_resid);

Vector predict(const SafeguardedModel& model, const Matrix& x,
               const Vector& t_hat, const Matrix& z);

}  // namespace stein
