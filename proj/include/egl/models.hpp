#ifndef EGL_MODELS_HPP
#define EGL_MODELS_HPP

#include "egl/core.hpp"

#include <optional>
#include <random>
#include <variant>

namespace egl {

// ---------------------------------------------------------------------------
// Linear regression
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LinearModel {
  Vector<Scalar> weights;
  Scalar bias{0};
  Scalar noise_variance{1};
  /// Set when the residual variance fell below the floor and was replaced by it.
  bool degenerate_variance{false};

  Index dim() const noexcept { return weights.size(); }
};

inline constexpr double kDefaultVarianceFloor = 1e-12;

/// Ordinary least squares with an intercept. The noise variance is the
/// unbiased residual estimator RSS / (n - d - 1), floored at `variance_floor`.
template <typename Scalar, typename DerivedX, typename DerivedY>
LinearModel<Scalar> fit_ols(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y,
                            Scalar variance_floor = Scalar(kDefaultVarianceFloor)) {
  const Index n = x.rows();
  const Index d = x.cols();
  require_dim(y.size(), n, "fit_ols targets");
  if (n < d + 1) {
    fail(ErrorCode::TooFewPoints,
         "fit_ols: need at least " + std::to_string(d + 1) + " points, got " + std::to_string(n));
  }
  Matrix<Scalar> design(n, d + 1);
  design.leftCols(d) = x.template cast<Scalar>();
  design.col(d).setOnes();

  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(design);
  if (qr.rank() < d + 1) fail(ErrorCode::RankDeficient, "fit_ols: design matrix is rank deficient");
  const Vector<Scalar> theta = qr.solve(y.template cast<Scalar>());

  LinearModel<Scalar> model;
  model.weights = theta.head(d);
  model.bias = theta(d);
  const Index dof = n - d - 1;
  const Scalar rss = (design * theta - y.template cast<Scalar>()).squaredNorm();
  const Scalar estimate = dof > 0 ? rss / Scalar(dof) : Scalar(0);
  if (!(estimate >= variance_floor)) {
    model.noise_variance = variance_floor;
    model.degenerate_variance = true;
  } else {
    model.noise_variance = estimate;
  }
  return model;
}

template <typename Scalar>
LinearModel<Scalar> fit_ols(const Dataset<Scalar>& data, Scalar variance_floor = Scalar(kDefaultVarianceFloor)) {
  return fit_ols<Scalar>(data.features(), data.targets(), variance_floor);
}

/// Homoscedastic member predictive: mean w.x + b, variance = fitted noise variance.
template <typename Scalar, typename Derived>
Gaussian<Scalar> predict_linear(const LinearModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  require_dim(x.size(), model.dim(), "predict_linear");
  return {model.weights.dot(x.template cast<Scalar>()) + model.bias, model.noise_variance};
}

// ---------------------------------------------------------------------------
// Multi-layer perceptron
// ---------------------------------------------------------------------------

enum class Activation { Relu, Tanh, Identity };

template <typename Scalar>
Scalar activate(Activation a, Scalar z) {
  switch (a) {
    case Activation::Relu: return z > Scalar(0) ? z : Scalar(0);
    case Activation::Tanh: return std::tanh(z);
    case Activation::Identity: return z;
  }
  return z;
}

template <typename Scalar>
Scalar activation_slope(Activation a, Scalar z) {
  switch (a) {
    case Activation::Relu: return z > Scalar(0) ? Scalar(1) : Scalar(0);
    case Activation::Tanh: {
      const Scalar t = std::tanh(z);
      return Scalar(1) - t * t;
    }
    case Activation::Identity: return Scalar(1);
  }
  return Scalar(1);
}

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;    // out
};

/// Layers are applied in order with `activation` between consecutive layers
/// and none after the last. With an aleatoric head the final layer has two
/// outputs: the prediction and log sigma^2(x).
template <typename Scalar>
struct MlpModel {
  std::vector<DenseLayer<Scalar>> layers;
  Activation activation{Activation::Relu};
  bool aleatoric_head{false};
  /// Mean squared training residual; the member variance when no head is used.
  Scalar residual_variance{1};

  Index input_dim() const { return layers.front().weight.cols(); }
  Index output_dim() const { return layers.back().weight.rows(); }
  Index embedding_dim() const { return layers.back().weight.cols(); }

  void validate() const {
    if (layers.empty()) fail(ErrorCode::DimensionMismatch, "MlpModel: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require_dim(layers[l].bias.size(), layers[l].weight.rows(), "MlpModel bias");
      if (l > 0) require_dim(layers[l].weight.cols(), layers[l - 1].weight.rows(), "MlpModel layer chain");
    }
    require_dim(output_dim(), aleatoric_head ? 2 : 1, "MlpModel output");
  }
};

// exp() of the log-variance output is evaluated on this range so the
// variance stays positive and finite.
inline constexpr double kLogVarianceBound = 30.0;

template <typename Scalar>
Scalar variance_from_log(Scalar log_variance) {
  const Scalar bound(kLogVarianceBound);
  return std::exp(std::clamp(log_variance, -bound, bound));
}

/// Glorot-scaled normal initialisation (He scaling for rectifiers), zero biases.
template <typename Scalar>
MlpModel<Scalar> make_mlp(Index input_dim, std::span<const Index> hidden, Activation activation,
                          bool aleatoric_head, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MlpModel<Scalar> model;
  model.activation = activation;
  model.aleatoric_head = aleatoric_head;
  Index in = input_dim;
  std::vector<Index> widths(hidden.begin(), hidden.end());
  widths.push_back(aleatoric_head ? 2 : 1);
  for (Index out : widths) {
    const double gain = activation == Activation::Relu ? 2.0 : 1.0;
    const double scale = std::sqrt(gain / double(in));
    DenseLayer<Scalar> layer{Matrix<Scalar>(out, in), Vector<Scalar>::Zero(out)};
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) layer.weight(r, c) = Scalar(scale * normal(rng));
    model.layers.push_back(std::move(layer));
    in = out;
  }
  return model;
}

template <typename Scalar>
MlpModel<Scalar> make_mlp(Index input_dim, std::initializer_list<Index> hidden, Activation activation,
                          bool aleatoric_head, std::uint64_t seed) {
  return make_mlp<Scalar>(input_dim, std::span<const Index>(hidden.begin(), hidden.size()), activation,
                          aleatoric_head, seed);
}

/// Every layer input a_l and pre-activation z_l of one forward pass.
template <typename Scalar>
struct ActivationCache {
  std::vector<Vector<Scalar>> inputs;
  std::vector<Vector<Scalar>> pre_activations;
};

template <typename Scalar>
struct MlpOutput {
  Scalar prediction{0};
  std::optional<Scalar> variance;
  ActivationCache<Scalar> cache;
};

template <typename Scalar, typename Derived>
MlpOutput<Scalar> mlp_forward(const MlpModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  require_dim(x.size(), model.input_dim(), "mlp_forward");
  MlpOutput<Scalar> out;
  const std::size_t depth = model.layers.size();
  out.cache.inputs.reserve(depth);
  out.cache.pre_activations.reserve(depth);
  Vector<Scalar> a = x.template cast<Scalar>();
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& layer = model.layers[l];
    Vector<Scalar> z = layer.weight * a + layer.bias;
    out.cache.inputs.push_back(std::move(a));
    if (l + 1 < depth) a = z.unaryExpr([&](Scalar v) { return activate(model.activation, v); });
    out.cache.pre_activations.push_back(std::move(z));
  }
  const auto& final_z = out.cache.pre_activations.back();
  out.prediction = final_z(0);
  if (model.aleatoric_head) out.variance = variance_from_log(final_z(1));
  return out;
}

/// Backpropagates d(loss)/d(output) through one cached forward pass and
/// returns d(loss)/d(z_l) for every layer.
template <typename Scalar>
std::vector<Vector<Scalar>> mlp_backward(const MlpModel<Scalar>& model, const ActivationCache<Scalar>& cache,
                                         const Vector<Scalar>& output_gradient) {
  const std::size_t depth = model.layers.size();
  require_dim(output_gradient.size(), model.output_dim(), "mlp_backward");
  std::vector<Vector<Scalar>> deltas(depth);
  deltas[depth - 1] = output_gradient;
  for (std::size_t l = depth - 1; l > 0; --l) {
    const Vector<Scalar> upstream = model.layers[l].weight.transpose() * deltas[l];
    deltas[l - 1] = upstream.cwiseProduct(cache.pre_activations[l - 1].unaryExpr(
        [&](Scalar v) { return activation_slope(model.activation, v); }));
  }
  return deltas;
}

/// Heteroscedastic Gaussian negative log-likelihood (without the constant).
template <typename Scalar>
Scalar aleatoric_loss(Scalar prediction, Scalar variance, Scalar target) {
  if (!(variance > Scalar(0)) || !std::isfinite(variance)) {
    fail(ErrorCode::NonPositiveVariance, "aleatoric_loss: variance must be positive");
  }
  const Scalar r = target - prediction;
  return r * r / (Scalar(2) * variance) + Scalar(0.5) * std::log(variance);
}

struct TrainConfig {
  int epochs{200};
  double step_size{0.01};
  double momentum{0.9};
  int batch_size{32};
  /// Global gradient-norm clip per step; 0 disables.
  double clip_norm{10.0};
  std::uint64_t seed{0};
  double variance_floor{kDefaultVarianceFloor};
};

namespace detail {

template <typename Scalar>
struct BatchPass {
  std::vector<Matrix<Scalar>> inputs;  // in_l x B
  std::vector<Matrix<Scalar>> pre;     // out_l x B
};

template <typename Scalar>
BatchPass<Scalar> forward_batch(const MlpModel<Scalar>& model, Matrix<Scalar> a) {
  BatchPass<Scalar> pass;
  const std::size_t depth = model.layers.size();
  for (std::size_t l = 0; l < depth; ++l) {
    Matrix<Scalar> z = model.layers[l].weight * a;
    z.colwise() += model.layers[l].bias;
    pass.inputs.push_back(std::move(a));
    if (l + 1 < depth) a = z.unaryExpr([&](Scalar v) { return activate(model.activation, v); });
    pass.pre.push_back(std::move(z));
  }
  return pass;
}

// Mean loss over the batch and its gradient w.r.t. the network output.
template <typename Scalar>
Scalar output_loss(const MlpModel<Scalar>& model, const Matrix<Scalar>& out, const Vector<Scalar>& y,
                   Matrix<Scalar>& grad) {
  const Index b = out.cols();
  grad.setZero(out.rows(), b);
  Scalar total(0);
  for (Index j = 0; j < b; ++j) {
    const Scalar r = out(0, j) - y(j);
    if (model.aleatoric_head) {
      const Scalar bound(kLogVarianceBound);
      const Scalar s = std::clamp(out(1, j), -bound, bound);
      const Scalar inv = std::exp(-s);
      total += Scalar(0.5) * inv * r * r + Scalar(0.5) * s;
      grad(0, j) = inv * r / Scalar(b);
      grad(1, j) = std::abs(out(1, j)) < bound ? (Scalar(0.5) - Scalar(0.5) * inv * r * r) / Scalar(b)
                                                  : Scalar(0);
    } else {
      total += Scalar(0.5) * r * r;
      grad(0, j) = r / Scalar(b);
    }
  }
  return total / Scalar(b);
}

}  // namespace detail

/// Mean training loss: 1/2 squared residual, or the aleatoric loss with a head.
template <typename Scalar>
Scalar training_loss(const MlpModel<Scalar>& model, const Dataset<Scalar>& data) {
  if (data.empty()) fail(ErrorCode::EmptyDataset, "training_loss: empty dataset");
  auto pass = detail::forward_batch(model, Matrix<Scalar>(data.features().transpose()));
  Matrix<Scalar> grad;
  return detail::output_loss(model, pass.pre.back(), data.targets(), grad);
}

/// Mini-batch gradient descent with momentum. Returns a trained copy; the
/// shuffling order is a pure function of `config.seed`.
template <typename Scalar>
MlpModel<Scalar> train(MlpModel<Scalar> model, const Dataset<Scalar>& data, const TrainConfig& config) {
  if (data.empty()) fail(ErrorCode::EmptyDataset, "train: empty dataset");
  model.validate();
  require_dim(data.dim(), model.input_dim(), "train");
  if (config.epochs < 0 || !(config.step_size > 0) || config.batch_size < 1) {
    fail(ErrorCode::ConfigInvalid, "train: invalid TrainConfig");
  }
  if (config.epochs == 0) return model;

  const std::size_t depth = model.layers.size();
  std::vector<DenseLayer<Scalar>> velocity;
  for (const auto& layer : model.layers) {
    velocity.push_back({Matrix<Scalar>::Zero(layer.weight.rows(), layer.weight.cols()),
                        Vector<Scalar>::Zero(layer.bias.size())});
  }
  std::vector<DenseLayer<Scalar>> grads = velocity;

  const Index n = data.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(config.seed);
  const Scalar lr(config.step_size);
  const Scalar mu(config.momentum);
  const Matrix<Scalar> xt = data.features().transpose();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n; start += config.batch_size) {
      const Index b = std::min<Index>(config.batch_size, n - start);
      Matrix<Scalar> a(xt.rows(), b);
      Vector<Scalar> y(b);
      for (Index j = 0; j < b; ++j) {
        const Index row = order[static_cast<std::size_t>(start + j)];
        a.col(j) = xt.col(row);
        y(j) = data.y(row);
      }
      auto pass = detail::forward_batch(model, std::move(a));
      Matrix<Scalar> delta;
      detail::output_loss(model, pass.pre.back(), y, delta);
      Scalar norm_sq(0);
      for (std::size_t l = depth; l-- > 0;) {
        grads[l].weight.noalias() = delta * pass.inputs[l].transpose();
        grads[l].bias = delta.rowwise().sum();
        norm_sq += grads[l].weight.squaredNorm() + grads[l].bias.squaredNorm();
        if (l > 0) {
          Matrix<Scalar> upstream = model.layers[l].weight.transpose() * delta;
          delta = upstream.cwiseProduct(pass.pre[l - 1].unaryExpr(
              [&](Scalar v) { return activation_slope(model.activation, v); }));
        }
      }
      Scalar scale(1);
      const Scalar norm = std::sqrt(norm_sq);
      if (config.clip_norm > 0 && norm > Scalar(config.clip_norm)) scale = Scalar(config.clip_norm) / norm;
      for (std::size_t l = 0; l < depth; ++l) {
        velocity[l].weight = mu * velocity[l].weight - lr * scale * grads[l].weight;
        velocity[l].bias = mu * velocity[l].bias - lr * scale * grads[l].bias;
        model.layers[l].weight += velocity[l].weight;
        model.layers[l].bias += velocity[l].bias;
      }
    }
  }

  auto pass = detail::forward_batch(model, Matrix<Scalar>(xt));
  const Scalar mse = (pass.pre.back().row(0).transpose() - data.targets()).squaredNorm() / Scalar(n);
  model.residual_variance = std::max(mse, Scalar(config.variance_floor));
  return model;
}

// ---------------------------------------------------------------------------
// Gaussian process regression (RBF kernel)
// ---------------------------------------------------------------------------

template <typename Scalar>
struct GpModel {
  Scalar lengthscale{1};
  Scalar signal_variance{1};
  Scalar noise_variance{0};
  /// Diagonal jitter that made the kernel matrix factorizable (0 if none).
  Scalar jitter{0};
  Matrix<Scalar> inputs;
  Vector<Scalar> targets;
  Eigen::LLT<Matrix<Scalar>> factorization;
  Vector<Scalar> alpha;  // (K + (noise + jitter) I)^-1 y

  Index dim() const noexcept { return inputs.cols(); }
  Matrix<Scalar> factor() const { return factorization.matrixL(); }
};

template <typename Scalar, typename DerivedA, typename DerivedB>
Scalar rbf_kernel(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b, Scalar lengthscale,
                  Scalar signal_variance) {
  const Scalar sq = (a.template cast<Scalar>() - b.template cast<Scalar>()).squaredNorm();
  return signal_variance * std::exp(-sq / (Scalar(2) * lengthscale * lengthscale));
}

template <typename Scalar, typename DerivedX, typename DerivedY>
GpModel<Scalar> gp_fit(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y, Scalar lengthscale,
                       Scalar signal_variance, Scalar noise_variance) {
  const Index n = x.rows();
  if (n < 1) fail(ErrorCode::EmptyDataset, "gp_fit: empty dataset");
  require_dim(y.size(), n, "gp_fit targets");
  if (!(lengthscale > 0) || !(signal_variance > 0) || !(noise_variance >= 0)) {
    fail(ErrorCode::ConfigInvalid, "gp_fit: invalid hyperparameters");
  }
  GpModel<Scalar> gp;
  gp.lengthscale = lengthscale;
  gp.signal_variance = signal_variance;
  gp.noise_variance = noise_variance;
  gp.inputs = x.template cast<Scalar>();
  gp.targets = y.template cast<Scalar>();

  Matrix<Scalar> k(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = rbf_kernel(gp.inputs.row(i), gp.inputs.row(j), lengthscale, signal_variance);
    }
  }
  k.diagonal().array() += noise_variance;

  const Scalar first_jitter = Scalar(1e-10) * signal_variance;
  const Scalar max_jitter = Scalar(1e-4) * signal_variance;
  Scalar jitter(0);
  for (;;) {
    Matrix<Scalar> attempt = k;
    attempt.diagonal().array() += jitter;
    gp.factorization.compute(attempt);
    // Pivots at round-off level mean the matrix is numerically singular even if LLT succeeded.
    const Scalar pivot_floor = Scalar(n) * std::numeric_limits<Scalar>::epsilon() * signal_variance;
    if (gp.factorization.info() == Eigen::Success &&
        gp.factorization.matrixLLT().diagonal().array().square().minCoeff() > pivot_floor) {
      break;
    }
    jitter = jitter == Scalar(0) ? first_jitter : jitter * Scalar(10);
    // Allow a little slack so round-off in the x10 ladder still reaches the cap.
    if (jitter > max_jitter * Scalar(1.000001)) {
      fail(ErrorCode::NotPositiveDefinite, "gp_fit: kernel matrix not positive definite at maximum jitter");
    }
  }
  gp.jitter = jitter;
  gp.alpha = gp.factorization.solve(gp.targets);
  return gp;
}

template <typename Scalar>
GpModel<Scalar> gp_fit(const Dataset<Scalar>& data, Scalar lengthscale, Scalar signal_variance,
                       Scalar noise_variance) {
  return gp_fit<Scalar>(data.features(), data.targets(), lengthscale, signal_variance, noise_variance);
}

/// Posterior mean and (latent) variance; negative round-off is clamped to 0.
template <typename Scalar, typename Derived>
Gaussian<Scalar> gp_predict(const GpModel<Scalar>& gp, const Eigen::MatrixBase<Derived>& x) {
  require_dim(x.size(), gp.dim(), "gp_predict");
  const Index n = gp.inputs.rows();
  const Vector<Scalar> xs = x.template cast<Scalar>();
  Vector<Scalar> cross(n);
  for (Index i = 0; i < n; ++i) {
    cross(i) = rbf_kernel(xs, gp.inputs.row(i).transpose(), gp.lengthscale, gp.signal_variance);
  }
  const Scalar mean = cross.dot(gp.alpha);
  const Vector<Scalar> v = gp.factorization.matrixL().solve(cross);
  const Scalar variance = std::max(Scalar(0), gp.signal_variance - v.squaredNorm());
  return {mean, variance};
}

// ---------------------------------------------------------------------------
// Uniform model interface
// ---------------------------------------------------------------------------

template <typename Scalar>
using Model = std::variant<LinearModel<Scalar>, MlpModel<Scalar>, GpModel<Scalar>>;

/// Where an MLP member's sigma^2 comes from.
enum class VarianceSource { AleatoricHead, Residual };

template <typename Scalar, typename Derived>
Gaussian<Scalar> predict(const MlpModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x,
                         VarianceSource source = VarianceSource::AleatoricHead) {
  auto out = mlp_forward(model, x);
  const bool head = model.aleatoric_head && source == VarianceSource::AleatoricHead;
  return {out.prediction, head ? *out.variance : model.residual_variance};
}

template <typename Scalar, typename Derived>
Gaussian<Scalar> predict(const LinearModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x,
                         VarianceSource = VarianceSource::AleatoricHead) {
  return predict_linear(model, x);
}

template <typename Scalar, typename Derived>
Gaussian<Scalar> predict(const GpModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x,
                         VarianceSource = VarianceSource::AleatoricHead) {
  return gp_predict(model, x);
}

template <typename Scalar, typename Derived>
Gaussian<Scalar> predict(const Model<Scalar>& model, const Eigen::MatrixBase<Derived>& x,
                         VarianceSource source = VarianceSource::AleatoricHead) {
  return std::visit([&](const auto& m) { return predict(m, x, source); }, model);
}

template <typename Scalar>
Index input_dim(const Model<Scalar>& model) {
  return std::visit(
      [](const auto& m) -> Index {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, MlpModel<Scalar>>) {
          return m.input_dim();
        } else {
          return m.dim();
        }
      },
      model);
}

/// Identity embedding for linear models.
template <typename Scalar, typename Derived>
Vector<Scalar> embed(const LinearModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  require_dim(x.size(), model.dim(), "embed");
  return x.template cast<Scalar>();
}

/// Penultimate-layer activation (the input of the final layer).
template <typename Scalar, typename Derived>
Vector<Scalar> embed(const MlpModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  auto out = mlp_forward(model, x);
  return std::move(out.cache.inputs.back());
}

}  // namespace egl

#endif  // EGL_MODELS_HPP
