#ifndef EGL_ENSEMBLE_HPP
#define EGL_ENSEMBLE_HPP

#include "egl/models.hpp"

namespace egl {

enum class ModelKind { Linear, Mlp, Gp };

struct GpHyperparameters {
  double lengthscale{1.0};
  double signal_variance{1.0};
  double noise_variance{0.01};
};

/// Recipe for fitting one regression model; shared by every ensemble member.
struct ModelSpec {
  ModelKind kind{ModelKind::Linear};
  std::vector<Index> hidden{32};
  Activation activation{Activation::Relu};
  bool aleatoric_head{false};
  TrainConfig train{};
  GpHyperparameters gp{};
  double variance_floor{kDefaultVarianceFloor};
};

inline Index minimum_fit_size(const ModelSpec& spec, Index dim) {
  return spec.kind == ModelKind::Linear ? dim + 1 : 1;
}

/// Fits a fresh model; MLP initialisation and shuffling derive from `seed`.
template <typename Scalar, typename DerivedX, typename DerivedY>
Model<Scalar> fit_model(const ModelSpec& spec, const Eigen::MatrixBase<DerivedX>& x,
                        const Eigen::MatrixBase<DerivedY>& y, std::uint64_t seed) {
  switch (spec.kind) {
    case ModelKind::Linear:
      return fit_ols<Scalar>(x, y, Scalar(spec.variance_floor));
    case ModelKind::Mlp: {
      auto init = make_mlp<Scalar>(x.cols(), std::span<const Index>(spec.hidden), spec.activation,
                                   spec.aleatoric_head, derive_seed({seed, 0}));
      TrainConfig config = spec.train;
      config.seed = derive_seed({seed, 1});
      config.variance_floor = spec.variance_floor;
      Dataset<Scalar> data(x.template cast<Scalar>(), y.template cast<Scalar>());
      return train(std::move(init), data, config);
    }
    case ModelKind::Gp:
      return gp_fit<Scalar>(x, y, Scalar(spec.gp.lengthscale), Scalar(spec.gp.signal_variance),
                            Scalar(spec.gp.noise_variance));
  }
  fail(ErrorCode::ConfigInvalid, "fit_model: unknown model kind");
}

template <typename Scalar>
Model<Scalar> fit_model(const ModelSpec& spec, const Dataset<Scalar>& data, std::uint64_t seed) {
  if (data.empty()) fail(ErrorCode::EmptyDataset, "fit_model: empty dataset");
  return fit_model<Scalar>(spec, data.features(), data.targets(), seed);
}

/// K bootstrap members plus the model fitted on all labelled data (f_z).
template <typename Scalar>
struct Ensemble {
  std::vector<Model<Scalar>> members;
  /// Row indices (with repetition) each member was fitted on.
  std::vector<std::vector<Index>> resamples;
  Model<Scalar> full_model;
  VarianceSource variance_source{VarianceSource::AleatoricHead};

  Index size() const noexcept { return static_cast<Index>(members.size()); }
  Index dim() const { return input_dim(full_model); }
};

/// Assembles an ensemble from already-fitted models.
template <typename Scalar>
Ensemble<Scalar> make_ensemble(std::vector<Model<Scalar>> members, Model<Scalar> full_model,
                               VarianceSource source = VarianceSource::AleatoricHead) {
  if (members.empty()) fail(ErrorCode::ConfigInvalid, "make_ensemble: need at least one member");
  const Index d = input_dim(full_model);
  for (const auto& m : members) require_dim(input_dim(m), d, "make_ensemble");
  Ensemble<Scalar> e;
  e.members = std::move(members);
  e.resamples.resize(e.members.size());
  e.full_model = std::move(full_model);
  e.variance_source = source;
  return e;
}

struct BootstrapOptions {
  VarianceSource variance_source{VarianceSource::AleatoricHead};
  /// Test hook: every member is fitted on the data in its original order.
  bool identity_resample{false};
  int max_redraws{16};
};

namespace detail {

template <typename Scalar>
void check_bootstrap_input(const Dataset<Scalar>& data, Index k, const ModelSpec& spec) {
  if (data.empty()) fail(ErrorCode::EmptyDataset, "bootstrap_ensemble: empty dataset");
  if (k < 1) fail(ErrorCode::ConfigInvalid, "bootstrap_ensemble: K must be positive");
  const Index need = minimum_fit_size(spec, data.dim());
  if (data.size() < need) {
    fail(ErrorCode::TooFewPoints, "bootstrap_ensemble: need at least " + std::to_string(need) + " points");
  }
}

}  // namespace detail

inline std::uint64_t full_model_seed(std::uint64_t seed) { return derive_seed({seed, 0x66756c6c}); }

/// Fits K members on with-replacement resamples of size |data|. Member k's
/// draw and initialisation depend only on (seed, k, attempt).
template <typename Scalar>
std::pair<std::vector<Model<Scalar>>, std::vector<std::vector<Index>>> bootstrap_members(
    const Dataset<Scalar>& data, Index k, const ModelSpec& spec, std::uint64_t seed,
    const BootstrapOptions& options = {}) {
  detail::check_bootstrap_input(data, k, spec);
  const Index n = data.size();
  std::vector<Model<Scalar>> members;
  std::vector<std::vector<Index>> resamples;
  for (Index member = 0; member < k; ++member) {
    for (int attempt = 0;; ++attempt) {
      const std::uint64_t stream = derive_seed({seed, static_cast<std::uint64_t>(member),
                                                static_cast<std::uint64_t>(attempt)});
      std::vector<Index> rows(static_cast<std::size_t>(n));
      if (options.identity_resample) {
        for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
      } else {
        std::mt19937_64 rng(stream);
        std::uniform_int_distribution<Index> pick(0, n - 1);
        for (auto& r : rows) r = pick(rng);
      }
      Matrix<Scalar> x(n, data.dim());
      Vector<Scalar> y(n);
      for (Index i = 0; i < n; ++i) {
        x.row(i) = data.features().row(rows[static_cast<std::size_t>(i)]);
        y(i) = data.y(rows[static_cast<std::size_t>(i)]);
      }
      try {
        const std::uint64_t fit_seed =
            options.identity_resample ? full_model_seed(seed) : derive_seed({stream, 0x6d656d});
        members.push_back(fit_model<Scalar>(spec, x, y, fit_seed));
        resamples.push_back(std::move(rows));
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::RankDeficient && e.code() != ErrorCode::TooFewPoints) throw;
        if (attempt >= options.max_redraws) {
          fail(ErrorCode::UnfittableResample,
               "bootstrap_ensemble: member " + std::to_string(member) + " unfittable after redraws");
        }
      }
    }
  }
  return {std::move(members), std::move(resamples)};
}

template <typename Scalar>
Ensemble<Scalar> bootstrap_ensemble(const Dataset<Scalar>& data, Index k, const ModelSpec& spec,
                                    std::uint64_t seed, const BootstrapOptions& options = {}) {
  detail::check_bootstrap_input(data, k, spec);
  auto full = fit_model<Scalar>(spec, data, full_model_seed(seed));
  auto [members, resamples] = bootstrap_members(data, k, spec, seed, options);
  Ensemble<Scalar> e = make_ensemble(std::move(members), std::move(full), options.variance_source);
  e.resamples = std::move(resamples);
  return e;
}

/// (mu_k, sigma_k^2) of every member, in member order.
template <typename Scalar, typename Derived>
std::vector<Gaussian<Scalar>> member_predictions(const Ensemble<Scalar>& ensemble,
                                                 const Eigen::MatrixBase<Derived>& x) {
  require_dim(x.size(), ensemble.dim(), "member_predictions");
  std::vector<Gaussian<Scalar>> out;
  out.reserve(ensemble.members.size());
  for (const auto& m : ensemble.members) out.push_back(predict(m, x, ensemble.variance_source));
  return out;
}

template <typename Scalar, typename Derived>
Scalar full_prediction(const Ensemble<Scalar>& ensemble, const Eigen::MatrixBase<Derived>& x) {
  return predict(ensemble.full_model, x, ensemble.variance_source).mean;
}

/// Mean aleatoric variance plus the population variance of member means.
template <typename Scalar>
Scalar predictive_variance(std::span<const Gaussian<Scalar>> members) {
  if (members.empty()) fail(ErrorCode::ConfigInvalid, "predictive_variance: no members");
  const Scalar k(static_cast<double>(members.size()));
  Scalar sigma_sq(0), mean(0), mean_sq(0);
  for (const auto& m : members) {
    sigma_sq += m.variance;
    mean += m.mean;
    mean_sq += m.mean * m.mean;
  }
  sigma_sq /= k;
  mean /= k;
  mean_sq /= k;
  return std::max(Scalar(0), sigma_sq + mean_sq - mean * mean);
}

template <typename Scalar, typename Derived>
Scalar predictive_variance(const Ensemble<Scalar>& ensemble, const Eigen::MatrixBase<Derived>& x) {
  const auto preds = member_predictions(ensemble, x);
  return predictive_variance(std::span<const Gaussian<Scalar>>(preds));
}

}  // namespace egl

#endif  // EGL_ENSEMBLE_HPP
