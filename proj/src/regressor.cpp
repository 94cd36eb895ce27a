#include "stein/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace stein {

namespace {

using json = nlohmann::json;

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kAdaptEps = 1e-8;
constexpr double kSecondMomentDecay = 0.999;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Matrix silu(const Matrix& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Matrix silu_grad(const Matrix& z) {
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

struct LayerCache {
  Matrix input;    // rows x in
  Matrix xhat;     // normalized activations
  Vector invstd;   // per-unit 1/sqrt(var+eps) used in this pass
  Matrix preact;   // post-normalization, pre-activation
  Matrix mask;     // dropout mask (already scaled)
};

struct LayerGrads {
  Matrix w;
  Vector b, bn_gamma, bn_beta;
};

/// Forward pass. In training mode batch statistics normalize the affine
/// output and the running statistics in stats_out are updated; otherwise
/// the stored running statistics are used and nothing is mutated.
Vector forward_pass(const MlpSpec& spec,
                    const std::vector<MlpModel::Layer>& layers,
                    std::vector<MlpModel::Layer>* stats_out, const Matrix& x,
                    bool training, Rng* rng, std::vector<LayerCache>* caches) {
  const std::size_t n_hidden = layers.size() - 1;
  Matrix cur = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const MlpModel::Layer& layer = layers[l];
    LayerCache* cache = caches ? &(*caches)[l] : nullptr;
    if (cache) cache->input = cur;

    Matrix a = cur * layer.w.transpose();
    a.rowwise() += layer.b.transpose();
    if (l == n_hidden) {
      cur = std::move(a);  // linear output unit
      break;
    }

    if (spec.batch_norm) {
      const Index rows = a.rows(), cols = a.cols();
      Vector mean(cols), var(cols);
      if (training) {
        mean = a.colwise().mean().transpose();
        for (Index c = 0; c < cols; ++c)
          var[c] = (a.col(c).array() - mean[c]).square().sum() /
                   static_cast<double>(rows);
        MlpModel::Layer& stats = (*stats_out)[l];
        stats.bn_run_mean =
            (1.0 - kBnMomentum) * stats.bn_run_mean + kBnMomentum * mean;
        stats.bn_run_var =
            (1.0 - kBnMomentum) * stats.bn_run_var + kBnMomentum * var;
      } else {
        mean = layer.bn_run_mean;
        var = layer.bn_run_var;
      }
      Vector invstd = (var.array() + kBnEps).rsqrt().matrix();
      Matrix xhat = a;
      xhat.rowwise() -= mean.transpose();
      xhat = xhat * invstd.asDiagonal();
      a = xhat * layer.bn_gamma.asDiagonal();
      a.rowwise() += layer.bn_beta.transpose();
      if (cache) {
        cache->xhat = std::move(xhat);
        cache->invstd = std::move(invstd);
      }
    }

    if (cache) cache->preact = a;
    Matrix s = silu(a);

    if (training && spec.dropout > 0.0) {
      const double keep = 1.0 - spec.dropout;
      Matrix mask(s.rows(), s.cols());
      for (Index r = 0; r < mask.rows(); ++r)
        for (Index c = 0; c < mask.cols(); ++c)
          mask(r, c) = rng->uniform() < keep ? 1.0 / keep : 0.0;
      s.array() *= mask.array();
      if (cache) cache->mask = std::move(mask);
    }
    cur = std::move(s);
  }
  return cur.col(0);
}

/// Backward pass for the mean-squared-error loss; dloss is dL/dyhat.
std::vector<LayerGrads> backward_pass(const MlpSpec& spec,
                                      const std::vector<MlpModel::Layer>& layers,
                                      const std::vector<LayerCache>& caches,
                                      const Vector& dloss, bool training) {
  const std::size_t n_layers = layers.size();
  std::vector<LayerGrads> grads(n_layers);

  Matrix delta = dloss;  // rows x 1 at the output
  for (std::size_t li = n_layers; li-- > 0;) {
    const MlpModel::Layer& layer = layers[li];
    const LayerCache& cache = caches[li];
    const bool output_layer = li + 1 == n_layers;

    if (!output_layer) {
      if (training && spec.dropout > 0.0)
        delta.array() *= cache.mask.array();
      delta.array() *= silu_grad(cache.preact).array();
      if (spec.batch_norm) {
        grads[li].bn_gamma =
            delta.cwiseProduct(cache.xhat).colwise().sum().transpose();
        grads[li].bn_beta = delta.colwise().sum().transpose();
        if (training) {
          const double rows = static_cast<double>(delta.rows());
          Matrix dxhat = delta * layer.bn_gamma.asDiagonal();
          const Vector sum_dxhat = dxhat.colwise().sum().transpose();
          const Vector sum_dxhat_xhat =
              dxhat.cwiseProduct(cache.xhat).colwise().sum().transpose();
          Matrix da = rows * dxhat;
          da.rowwise() -= sum_dxhat.transpose();
          da -= cache.xhat * sum_dxhat_xhat.asDiagonal();
          da = da * (cache.invstd / rows).asDiagonal();
          delta = std::move(da);
        } else {
          delta = delta *
                  layer.bn_gamma.cwiseProduct(cache.invstd).asDiagonal();
        }
      }
    }

    grads[li].w.noalias() = delta.transpose() * cache.input;
    grads[li].b = delta.colwise().sum().transpose();
    if (li > 0) delta = (delta * layer.w).eval();
  }
  return grads;
}

double mse(const Vector& a, const Vector& b) {
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

void MlpSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("mlp spec: input_dim must be >= 1");
  for (Index h : hidden)
    if (h < 1) throw std::invalid_argument("mlp spec: hidden widths must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("mlp spec: dropout must lie in [0, 1)");
  if (epochs < 1) throw std::invalid_argument("mlp spec: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("mlp spec: batch_size must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("mlp spec: learning_rate must be > 0");
  if (weight_decay < 0.0)
    throw std::invalid_argument("mlp spec: weight_decay must be >= 0");
  if (patience < 1) throw std::invalid_argument("mlp spec: patience must be >= 1");
  if (!(val_fraction > 0.0) || val_fraction >= 0.5)
    throw std::invalid_argument("mlp spec: val_fraction must lie in (0, 0.5)");
}

std::string MlpSpec::to_json() const {
  json j{{"input_dim", input_dim},
         {"hidden", hidden},
         {"batch_norm", batch_norm},
         {"dropout", dropout},
         {"epochs", epochs},
         {"batch_size", batch_size},
         {"learning_rate", learning_rate},
         {"weight_decay", weight_decay},
         {"patience", patience},
         {"val_fraction", val_fraction},
         {"seed", seed}};
  return j.dump();
}

MlpSpec MlpSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  MlpSpec s;
  s.input_dim = j.at("input_dim").get<Index>();
  s.hidden = j.at("hidden").get<std::vector<Index>>();
  s.batch_norm = j.at("batch_norm").get<bool>();
  s.dropout = j.at("dropout").get<double>();
  s.epochs = j.at("epochs").get<int>();
  s.batch_size = j.at("batch_size").get<Index>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.patience = j.at("patience").get<int>();
  s.val_fraction = j.at("val_fraction").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

MlpModel MlpModel::init(const MlpSpec& spec) {
  spec.validate();
  MlpModel m;
  m.spec_ = spec;
  Rng rng(mix_seed(spec.seed, 0x696e6974ULL));

  Index in = spec.input_dim;
  auto make_layer = [&](Index out, bool hidden_layer) {
    Layer layer;
    const double scale = hidden_layer
                             ? std::sqrt(2.0 / static_cast<double>(in))
                             : std::sqrt(1.0 / static_cast<double>(in));
    layer.w.resize(out, in);
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) layer.w(r, c) = scale * rng.normal();
    layer.b = Vector::Zero(out);
    if (hidden_layer && spec.batch_norm) {
      layer.bn_gamma = Vector::Ones(out);
      layer.bn_beta = Vector::Zero(out);
      layer.bn_run_mean = Vector::Zero(out);
      layer.bn_run_var = Vector::Ones(out);
    }
    in = out;
    return layer;
  };
  for (Index h : spec.hidden) m.layers_.push_back(make_layer(h, true));
  m.layers_.push_back(make_layer(1, false));
  return m;
}

Vector MlpModel::predict(const Matrix& features) const {
  if (features.cols() != spec_.input_dim)
    throw std::invalid_argument("predict: feature dimension mismatch");
  if (features.rows() == 0) return Vector(0);
  return forward_pass(spec_, layers_, nullptr, features, false, nullptr,
                      nullptr);
}

Vector predict(const MlpModel& model, const Matrix& features) {
  return model.predict(features);
}

MlpModel train(const Matrix& features, const Vector& y, const MlpSpec& spec_in) {
  MlpSpec spec = spec_in;
  spec.input_dim = features.cols();
  spec.validate();
  const Index n = features.rows();
  if (y.size() != n) throw std::invalid_argument("train: row mismatch");
  if (n < 2 * spec.batch_size)
    throw std::invalid_argument("train: need n >= 2 * batch_size");

  MlpModel model = MlpModel::init(spec);
  Rng rng(mix_seed(spec.seed, 0x747261696eULL));

  // Held-out rows for early stopping.
  std::vector<Index> order = rng.permutation(n);
  const Index n_val = std::max<Index>(
      1,
      static_cast<Index>(std::llround(spec.val_fraction * static_cast<double>(n))));
  std::vector<Index> val_idx(order.end() - n_val, order.end());
  std::vector<Index> train_idx(order.begin(), order.end() - n_val);

  Matrix val_x(n_val, features.cols());
  Vector val_y(n_val);
  for (Index i = 0; i < n_val; ++i) {
    val_x.row(i) = features.row(val_idx[static_cast<std::size_t>(i)]);
    val_y[i] = y[val_idx[static_cast<std::size_t>(i)]];
  }

  struct Moments {
    Matrix w;
    Vector b, bn_gamma, bn_beta;
  };
  std::vector<Moments> moments(model.layers_.size());
  for (std::size_t l = 0; l < model.layers_.size(); ++l) {
    moments[l].w =
        Matrix::Zero(model.layers_[l].w.rows(), model.layers_[l].w.cols());
    moments[l].b = Vector::Zero(model.layers_[l].b.size());
    if (model.layers_[l].bn_gamma.size() > 0) {
      moments[l].bn_gamma = Vector::Zero(model.layers_[l].bn_gamma.size());
      moments[l].bn_beta = Vector::Zero(model.layers_[l].bn_beta.size());
    }
  }
  long step = 0;

  auto update_tensor = [&](auto& theta, const auto& grad, auto& moment) {
    moment.array() = kSecondMomentDecay * moment.array() +
                     (1.0 - kSecondMomentDecay) * grad.array().square();
    const double correction =
        1.0 - std::pow(kSecondMomentDecay, static_cast<double>(step));
    theta.array() -=
        spec.learning_rate *
        (grad.array() / ((moment.array() / correction).sqrt() + kAdaptEps) +
         spec.weight_decay * theta.array());
  };

  const Index n_train = static_cast<Index>(train_idx.size());
  std::vector<Index> batch_order(static_cast<std::size_t>(n_train));
  std::iota(batch_order.begin(), batch_order.end(), Index{0});

  std::vector<MlpModel::Layer> best_layers = model.layers_;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int stall = 0;

  std::vector<LayerCache> caches(model.layers_.size());
  Matrix bx;
  Vector by;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    rng.shuffle(batch_order);
    double loss_sum = 0.0;
    Index loss_rows = 0;
    for (Index lo = 0; lo < n_train; lo += spec.batch_size) {
      const Index hi = std::min(lo + spec.batch_size, n_train);
      if (hi - lo < 2) break;  // a single row cannot be batch-normalized
      bx.resize(hi - lo, features.cols());
      by.resize(hi - lo);
      for (Index i = lo; i < hi; ++i) {
        const Index r = train_idx[static_cast<std::size_t>(
            batch_order[static_cast<std::size_t>(i)])];
        bx.row(i - lo) = features.row(r);
        by[i - lo] = y[r];
      }

      const Vector pred = forward_pass(spec, model.layers_, &model.layers_, bx,
                                       true, &rng, &caches);
      const Vector resid = pred - by;
      const double batch_loss =
          resid.squaredNorm() / static_cast<double>(resid.size());
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: loss diverged at epoch " +
                                 std::to_string(epoch));
      loss_sum += batch_loss * static_cast<double>(resid.size());
      loss_rows += resid.size();

      const Vector dloss = 2.0 * resid / static_cast<double>(resid.size());
      const auto grads =
          backward_pass(spec, model.layers_, caches, dloss, true);

      ++step;
      for (std::size_t l = 0; l < model.layers_.size(); ++l) {
        update_tensor(model.layers_[l].w, grads[l].w, moments[l].w);
        update_tensor(model.layers_[l].b, grads[l].b, moments[l].b);
        if (grads[l].bn_gamma.size() > 0) {
          update_tensor(model.layers_[l].bn_gamma, grads[l].bn_gamma,
                        moments[l].bn_gamma);
          update_tensor(model.layers_[l].bn_beta, grads[l].bn_beta,
                        moments[l].bn_beta);
        }
      }
    }

    model.history_.train_loss.push_back(
        loss_sum / static_cast<double>(std::max<Index>(loss_rows, 1)));
    const double val_loss = mse(model.predict(val_x), val_y);
    if (!std::isfinite(val_loss))
      throw std::runtime_error("train: loss diverged at epoch " +
                               std::to_string(epoch));
    model.history_.val_loss.push_back(val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_layers = model.layers_;
      best_epoch = epoch;
      stall = 0;
    } else if (++stall >= spec.patience) {
      break;
    }
  }

  model.layers_ = std::move(best_layers);
  model.history_.best_epoch = best_epoch;
  return model;
}

double gradient_check(const MlpModel& model, const Matrix& features,
                      const Vector& y, int n_params, std::uint64_t seed) {
  if (features.cols() != model.spec().input_dim)
    throw std::invalid_argument("gradient_check: feature dimension mismatch");

  MlpModel work = model;
  std::vector<LayerCache> caches(work.layers().size());
  const Vector pred = forward_pass(work.spec(), work.layers(), nullptr,
                                   features, false, nullptr, &caches);
  const Vector dloss = 2.0 * (pred - y) / static_cast<double>(y.size());
  const auto grads =
      backward_pass(work.spec(), work.layers(), caches, dloss, false);

  std::vector<double> analytic;
  for (std::size_t l = 0; l < work.layers().size(); ++l) {
    const auto append = [&](const auto& m) {
      analytic.insert(analytic.end(), m.data(), m.data() + m.size());
    };
    append(grads[l].w);
    append(grads[l].b);
    if (grads[l].bn_gamma.size() > 0) {
      append(grads[l].bn_gamma);
      append(grads[l].bn_beta);
    }
  }

  std::vector<double*> params = work.parameters();
  if (params.size() != analytic.size())
    throw std::logic_error("gradient_check: parameter enumeration mismatch");

  auto loss_at = [&]() {
    const Vector p = forward_pass(work.spec(), work.layers(), nullptr, features,
                                  false, nullptr, nullptr);
    return (p - y).squaredNorm() / static_cast<double>(y.size());
  };

  Rng rng(mix_seed(seed, 0x67636b31ULL));
  std::vector<std::size_t> idx(params.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  const std::size_t m =
      std::min<std::size_t>(idx.size(), static_cast<std::size_t>(n_params));

  constexpr double kStep = 1e-5;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double* theta = params[idx[i]];
    const double saved = *theta;
    *theta = saved + kStep;
    const double up = loss_at();
    *theta = saved - kStep;
    const double down = loss_at();
    *theta = saved;
    const double numeric = (up - down) / (2.0 * kStep);
    const double ana = analytic[idx[i]];
    const double rel = std::abs(ana - numeric) /
                       std::max({std::abs(ana), std::abs(numeric), 1e-6});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

std::vector<double*> MlpModel::parameters() {
  std::vector<double*> out;
  for (auto& layer : layers_) {
    for (Index i = 0; i < layer.w.size(); ++i) out.push_back(layer.w.data() + i);
    for (Index i = 0; i < layer.b.size(); ++i) out.push_back(layer.b.data() + i);
    if (layer.bn_gamma.size() > 0) {
      for (Index i = 0; i < layer.bn_gamma.size(); ++i)
        out.push_back(layer.bn_gamma.data() + i);
      for (Index i = 0; i < layer.bn_beta.size(); ++i)
        out.push_back(layer.bn_beta.data() + i);
    }
  }
  return out;
}

std::vector<const double*> MlpModel::parameters() const {
  auto* self = const_cast<MlpModel*>(this);
  std::vector<double*> mut = self->parameters();
  return {mut.begin(), mut.end()};
}

namespace {

void write_bytes(std::ostream& out, const void* data, std::size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

void read_bytes(std::istream& in, void* data, std::size_t size) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (!in) throw std::runtime_error("model file truncated");
}

void write_matrix(std::ostream& out, const Matrix& m) {
  const std::int64_t rows = m.rows(), cols = m.cols();
  write_bytes(out, &rows, sizeof rows);
  write_bytes(out, &cols, sizeof cols);
  write_bytes(out, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

Matrix read_matrix(std::istream& in) {
  std::int64_t rows = 0, cols = 0;
  read_bytes(in, &rows, sizeof rows);
  read_bytes(in, &cols, sizeof cols);
  if (rows < 0 || cols < 0 || rows * cols > (1LL << 32))
    throw std::runtime_error("model file corrupt");
  Matrix m(rows, cols);
  read_bytes(in, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  return m;
}

void write_vec(std::ostream& out, const Vector& v) {
  const std::int64_t size = v.size();
  write_bytes(out, &size, sizeof size);
  write_bytes(out, v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
}

Vector read_vec(std::istream& in) {
  std::int64_t size = 0;
  read_bytes(in, &size, sizeof size);
  if (size < 0 || size > (1LL << 32)) throw std::runtime_error("model file corrupt");
  Vector v(size);
  read_bytes(in, v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  return v;
}

constexpr char kModelMagic[8] = {'S', 'T', 'M', 'L', 'P', '0', '0', '1'};
constexpr char kSafeguardMagic[8] = {'S', 'T', 'S', 'F', 'G', '0', '0', '1'};

void save_model_stream(std::ostream& out, const MlpModel& m) {
  write_bytes(out, kModelMagic, sizeof kModelMagic);
  const std::string spec = m.spec().to_json();
  const std::uint64_t len = spec.size();
  write_bytes(out, &len, sizeof len);
  write_bytes(out, spec.data(), spec.size());
  const std::uint64_t n_layers = m.layers().size();
  write_bytes(out, &n_layers, sizeof n_layers);
  for (const auto& layer : m.layers()) {
    write_matrix(out, layer.w);
    write_vec(out, layer.b);
    const std::uint8_t has_bn = layer.bn_gamma.size() > 0 ? 1 : 0;
    write_bytes(out, &has_bn, sizeof has_bn);
    if (has_bn) {
      write_vec(out, layer.bn_gamma);
      write_vec(out, layer.bn_beta);
      write_vec(out, layer.bn_run_mean);
      write_vec(out, layer.bn_run_var);
    }
  }
}

MlpModel load_model_stream(std::istream& in) {
  char magic[8];
  read_bytes(in, magic, sizeof magic);
  if (std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw std::runtime_error("not a model file (bad magic)");
  std::uint64_t len = 0;
  read_bytes(in, &len, sizeof len);
  if (len > (1ULL << 20)) throw std::runtime_error("model file corrupt");
  std::string spec_text(len, '\0');
  read_bytes(in, spec_text.data(), len);
  const MlpSpec spec = MlpSpec::from_json(spec_text);
  MlpModel m = MlpModel::init(spec);
  std::uint64_t n_layers = 0;
  read_bytes(in, &n_layers, sizeof n_layers);
  if (n_layers != m.layers().size())
    throw std::runtime_error("model file layer count mismatch");
  for (auto& layer : m.layers()) {
    layer.w = read_matrix(in);
    layer.b = read_vec(in);
    std::uint8_t has_bn = 0;
    read_bytes(in, &has_bn, sizeof has_bn);
    if (has_bn) {
      layer.bn_gamma = read_vec(in);
      layer.bn_beta = read_vec(in);
      layer.bn_run_mean = read_vec(in);
      layer.bn_run_var = read_vec(in);
    }
  }
  return m;
}

}  // namespace

void MlpModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model: " + path);
  save_model_stream(out, *this);
}

MlpModel MlpModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model: " + path);
  return load_model_stream(in);
}

SafeguardedModel fit_with_safeguard(const Matrix& x, const Matrix& z,
                                    const Vector& t_hat, const Vector& y,
                                    const MlpSpec& spec_main,
                                    const MlpSpec& spec_resid) {
  const Index n = x.rows();
  if (z.rows() != n || t_hat.size() != n || y.size() != n)
    throw std::invalid_argument("fit_with_safeguard: row mismatch");

  Matrix f_main(n, x.cols() + 1);
  f_main << x, t_hat;
  Matrix f_resid(n, x.cols() + z.cols());
  f_resid << x, z;

  // A common held-out slice decides whether the residual stage helps.
  Rng rng(mix_seed(spec_main.seed, 0x73666764ULL));
  std::vector<Index> order = rng.permutation(n);
  const Index n_val = std::max<Index>(
      1, static_cast<Index>(std::llround(0.1 * static_cast<double>(n))));
  std::vector<Index> val_idx(order.end() - n_val, order.end());
  std::vector<Index> fit_idx(order.begin(), order.end() - n_val);

  auto take = [](const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
  };
  auto take_v = [](const Vector& v, const std::vector<Index>& rows) {
    Vector out(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      out[static_cast<Index>(i)] = v[rows[i]];
    return out;
  };

  const Matrix f_main_fit = take(f_main, fit_idx);
  const Matrix f_main_val = take(f_main, val_idx);
  const Matrix f_resid_fit = take(f_resid, fit_idx);
  const Matrix f_resid_val = take(f_resid, val_idx);
  const Vector y_fit = take_v(y, fit_idx);
  const Vector y_val = take_v(y, val_idx);

  SafeguardedModel out;
  out.main = train(f_main_fit, y_fit, spec_main);

  const Vector main_val_pred = out.main.predict(f_main_val);
  out.val_mse_main =
      (main_val_pred - y_val).squaredNorm() / static_cast<double>(n_val);

  const Vector resid_fit = y_fit - out.main.predict(f_main_fit);
  out.residual = train(f_resid_fit, resid_fit, spec_resid);

  const Vector combined_val_pred =
      main_val_pred + out.residual.predict(f_resid_val);
  out.val_mse_combined =
      (combined_val_pred - y_val).squaredNorm() / static_cast<double>(n_val);

  out.alpha = out.val_mse_combined <= 0.99 * out.val_mse_main ? 1 : 0;
  return out;
}

Vector predict(const SafeguardedModel& model, const Matrix& x,
               const Vector& t_hat, const Matrix& z) {
  const Index n = x.rows();
  if (t_hat.size() != n || z.rows() != n)
    throw std::invalid_argument("predict: row mismatch");
  Matrix f_main(n, x.cols() + 1);
  f_main << x, t_hat;
  Vector pred = model.main.predict(f_main);
  if (model.alpha == 1) {
    Matrix f_resid(n, x.cols() + z.cols());
    f_resid << x, z;
    pred += model.residual.predict(f_resid);
  }
  return pred;
}

void SafeguardedModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model: " + path);
  write_bytes(out, kSafeguardMagic, sizeof kSafeguardMagic);
  const std::int32_t a = alpha;
  write_bytes(out, &a, sizeof a);
  write_bytes(out, &val_mse_main, sizeof val_mse_main);
  write_bytes(out, &val_mse_combined, sizeof val_mse_combined);
  save_model_stream(out, main);
  save_model_stream(out, residual);
}

SafeguardedModel SafeguardedModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model: " + path);
  char magic[8];
  read_bytes(in, magic, sizeof magic);
  if (std::memcmp(magic, kSafeguardMagic, sizeof magic) != 0)
    throw std::runtime_error("not a combined model file (bad magic)");
  SafeguardedModel m;
  std::int32_t a = 0;
  read_bytes(in, &a, sizeof a);
  m.alpha = a;
  read_bytes(in, &m.val_mse_main, sizeof m.val_mse_main);
  read_bytes(in, &m.val_mse_combined, sizeof m.val_mse_combined);
  m.main = load_model_stream(in);
  m.residual = load_model_stream(in);
  return m;
}

}  // namespace stein
