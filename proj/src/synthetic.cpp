#include "egl/harness.hpp"

#include <random>

namespace egl::harness {

namespace {

constexpr double kClusterSpread = 0.8;
constexpr double kCenterRange = 2.5;

}  // namespace

double synthetic_mean(const VectorXd& x) {
  const Index d = x.size();
  double f = 0.0;
  for (Index j = 0; j < d; ++j) f += std::sin(1.5 * x(j) + 0.7 * double(j));
  f += 0.3 * x(0) * x((1) % d);
  return f;
}

double synthetic_noise_sd(const SyntheticSpec& spec, const VectorXd& x) {
  if (spec.noise == NoiseModel::Homoscedastic) return spec.noise_scale * 0.2;
  return spec.noise_scale * (0.02 + 0.2 / (1.0 + std::exp(-2.0 * x(0))));
}

Data generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 4 || spec.d < 1 || spec.clusters < 1 || !(spec.noise_scale >= 0.0)) {
    fail(ErrorCode::ConfigInvalid, "generate_synthetic: need n >= 4, d >= 1, clusters >= 1, noise_scale >= 0");
  }
  std::mt19937_64 rng(derive_seed({spec.seed, 0x73796e}));
  std::uniform_real_distribution<double> uniform(-kCenterRange, kCenterRange);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix<double> centers(spec.clusters, spec.d);
  for (Index c = 0; c < spec.clusters; ++c)
    for (Index j = 0; j < spec.d; ++j) centers(c, j) = uniform(rng);
  const std::vector<double> weights(static_cast<std::size_t>(spec.clusters), 1.0);
  std::discrete_distribution<Index> pick(weights.begin(), weights.end());

  Matrix<double> x(spec.n, spec.d);
  VectorXd y(spec.n);
  for (Index i = 0; i < spec.n; ++i) {
    const Index c = pick(rng);
    for (Index j = 0; j < spec.d; ++j) x(i, j) = centers(c, j) + kClusterSpread * normal(rng);
    const VectorXd xi = x.row(i).transpose();
    y(i) = synthetic_mean(xi) + synthetic_noise_sd(spec, xi) * normal(rng);
  }
  return Data(std::move(x), std::move(y));
}

}  // namespace egl::harness
