#ifndef EGL_EGL_HPP
#define EGL_EGL_HPP

#include "egl/ensemble.hpp"

namespace egl {

/// Expected gradient length of one candidate, split into its factors:
/// score = gradient_factor * (mean_sigma_sq + mean_disagreement_sq).
template <typename Scalar>
struct EglScore {
  Id candidate_id{0};
  Scalar score{0};
  Scalar gradient_factor{0};
  Scalar mean_sigma_sq{0};
  Scalar mean_disagreement_sq{0};
};

/// Whether the constant intercept coordinate is part of the gradient vector.
enum class BiasCoordinate { Append, Omit };

template <typename Scalar, typename Derived>
Vector<Scalar> gradient_input(const Eigen::MatrixBase<Derived>& x, BiasCoordinate bias) {
  if (bias == BiasCoordinate::Omit) return x.template cast<Scalar>();
  Vector<Scalar> out(x.size() + 1);
  out.head(x.size()) = x.template cast<Scalar>();
  out(x.size()) = Scalar(1);
  return out;
}

template <typename Scalar>
void require_linear(const Ensemble<Scalar>& ensemble, const char* where) {
  auto linear = [](const Model<Scalar>& m) { return std::holds_alternative<LinearModel<Scalar>>(m); };
  if (!linear(ensemble.full_model) || !std::all_of(ensemble.members.begin(), ensemble.members.end(), linear)) {
    fail(ErrorCode::NonLinearMember, std::string(where) + ": requires linear members");
  }
}

/// (1/K) sum sigma_k^2 and (1/K) sum (mu_k - f_z)^2.
template <typename Scalar>
std::pair<Scalar, Scalar> closed_form_terms(std::span<const Gaussian<Scalar>> members, Scalar full_prediction) {
  const Scalar k(static_cast<double>(members.size()));
  Scalar sigma_sq(0), disagreement(0);
  for (const auto& m : members) {
    sigma_sq += m.variance;
    const Scalar gap = m.mean - full_prediction;
    disagreement += gap * gap;
  }
  return {sigma_sq / k, disagreement / k};
}

/// Committee disagreement score: (1/K) sum_k |(f_z(x) - f_k(x)) x|.
template <typename Scalar, typename Derived>
Scalar score_cai(const Ensemble<Scalar>& ensemble, const Eigen::MatrixBase<Derived>& x,
                 BiasCoordinate bias = BiasCoordinate::Append) {
  require_linear(ensemble, "score_cai");
  const auto members = member_predictions(ensemble, x);
  const Scalar fz = full_prediction(ensemble, x);
  const Scalar norm = gradient_input<Scalar>(x, bias).norm();
  Scalar total(0);
  for (const auto& m : members) total += std::abs(fz - m.mean) * norm;
  return total / Scalar(static_cast<double>(members.size()));
}

/// Closed-form expected squared gradient norm for linear members:
/// ||x||^2 / K * sum_k [sigma_k^2 + (mu_k - f_z)^2].
template <typename Scalar, typename Derived>
EglScore<Scalar> score_closed_form_linear(const Ensemble<Scalar>& ensemble, const Eigen::MatrixBase<Derived>& x,
                                          Id candidate_id = 0, BiasCoordinate bias = BiasCoordinate::Append) {
  require_linear(ensemble, "score_closed_form_linear");
  const auto members = member_predictions(ensemble, x);
  const auto [sigma_sq, disagreement] =
      closed_form_terms(std::span<const Gaussian<Scalar>>(members), full_prediction(ensemble, x));
  EglScore<Scalar> s;
  s.candidate_id = candidate_id;
  s.gradient_factor = gradient_input<Scalar>(x, bias).squaredNorm();
  s.mean_sigma_sq = sigma_sq;
  s.mean_disagreement_sq = disagreement;
  s.score = s.gradient_factor * (sigma_sq + disagreement);
  return s;
}

/// Same decomposition with ||grad_theta f_z(x)||^2 as the gradient factor.
template <typename Scalar, typename Derived>
EglScore<Scalar> score_closed_form_nonlinear(const Ensemble<Scalar>& ensemble, const Eigen::MatrixBase<Derived>& x,
                                             Scalar grad_norm_sq, Id candidate_id = 0) {
  if (!(grad_norm_sq >= Scalar(0))) fail(ErrorCode::NegativeGradNorm, "score_closed_form_nonlinear");
  const auto members = member_predictions(ensemble, x);
  const auto [sigma_sq, disagreement] =
      closed_form_terms(std::span<const Gaussian<Scalar>>(members), full_prediction(ensemble, x));
  EglScore<Scalar> s;
  s.candidate_id = candidate_id;
  s.gradient_factor = grad_norm_sq;
  s.mean_sigma_sq = sigma_sq;
  s.mean_disagreement_sq = disagreement;
  s.score = grad_norm_sq * (sigma_sq + disagreement);
  return s;
}

/// Stream used for one candidate's Monte-Carlo labels; independent of scoring order.
inline std::uint64_t monte_carlo_stream(std::uint64_t seed, Id candidate_id) {
  return derive_seed({seed, static_cast<std::uint64_t>(candidate_id), 0x6d63});
}

/// Sample mean over members of (f_z - y)^2 with y ~ N(mu_k, sigma_k^2),
/// `n_samples` draws per member.
template <typename Scalar>
Scalar monte_carlo_expected_sq_residual(std::span<const Gaussian<Scalar>> members, Scalar full_prediction,
                                        Index n_samples, std::mt19937_64& rng) {
  if (n_samples < 1) fail(ErrorCode::ConfigInvalid, "monte_carlo: n_samples must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0.0;
  for (const auto& m : members) {
    const double mean = double(m.mean);
    const double sd = std::sqrt(double(m.variance));
    const double fz = double(full_prediction);
    double acc = 0.0;
    if (sd == 0.0) {
      acc = double(n_samples) * (fz - mean) * (fz - mean);
    } else {
      for (Index j = 0; j < n_samples; ++j) {
        const double r = fz - (mean + sd * normal(rng));
        acc += r * r;
      }
    }
    total += acc / double(n_samples);
  }
  return Scalar(total / double(members.size()));
}

/// Integral form estimated by sampling: (1/K) sum_k (1/n) sum_j ||(f_z - y_j) x||^2.
template <typename Scalar, typename Derived>
Scalar score_monte_carlo(const Ensemble<Scalar>& ensemble, const Eigen::MatrixBase<Derived>& x, Index n_samples,
                         std::uint64_t seed, Id candidate_id = 0, BiasCoordinate bias = BiasCoordinate::Append) {
  require_linear(ensemble, "score_monte_carlo");
  const auto members = member_predictions(ensemble, x);
  std::mt19937_64 rng(monte_carlo_stream(seed, candidate_id));
  const Scalar expected = monte_carlo_expected_sq_residual(std::span<const Gaussian<Scalar>>(members),
                                                           full_prediction(ensemble, x), n_samples, rng);
  return gradient_input<Scalar>(x, bias).squaredNorm() * expected;
}

/// Ids of the `budget` highest scores; ties go to the lower id.
template <typename Scalar>
std::vector<Id> select_batch(std::span<const Scalar> scores, std::span<const Id> ids, Index budget) {
  const auto rows = top_indices(scores, ids, budget);
  std::vector<Id> out;
  out.reserve(rows.size());
  for (Index r : rows) out.push_back(ids[static_cast<std::size_t>(r)]);
  return out;
}

template <typename Scalar>
std::vector<Id> select_batch(std::span<const EglScore<Scalar>> scores, Index budget) {
  std::vector<Scalar> values;
  std::vector<Id> ids;
  for (const auto& s : scores) {
    values.push_back(s.score);
    ids.push_back(s.candidate_id);
  }
  return select_batch(std::span<const Scalar>(values), std::span<const Id>(ids), budget);
}

}  // namespace egl

#endif  // EGL_EGL_HPP
