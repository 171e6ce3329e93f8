#ifndef EGL_EGLPP_HPP
#define EGL_EGLPP_HPP

#include "egl/egl.hpp"

#include <limits>

namespace egl {

// ---------------------------------------------------------------------------
// Perplexity-calibrated neighbourhoods
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SigmaCalibration {
  Scalar sigma{1};
  Scalar achieved{1};
  /// Target perplexity unattainable for this row; sigma is the nearest search bound.
  bool degenerate{false};
  int iterations{0};
};

/// Perplexity 2^H (H in bits) of the Gaussian neighbourhood row at bandwidth
/// sigma. Optionally writes the normalised row to `prob`.
template <typename Scalar, typename Derived>
Scalar row_perplexity(const Eigen::MatrixBase<Derived>& sq_distances, Scalar sigma,
                      Vector<Scalar>* prob = nullptr) {
  const Scalar shift = sq_distances.minCoeff();
  const Scalar inv = Scalar(1) / (Scalar(2) * sigma * sigma);
  Vector<Scalar> scaled = (sq_distances.array() - shift).matrix() * inv;
  Vector<Scalar> w = (-scaled.array()).exp().matrix();
  const Scalar z = w.sum();
  // Entropy in nats: log Z + E[scaled].
  const Scalar entropy = std::log(z) + w.dot(scaled) / z;
  if (prob) *prob = w / z;
  return std::exp(entropy);
}

namespace detail {

template <typename Scalar, typename Derived>
Scalar reference_scale(const Eigen::MatrixBase<Derived>& sq_distances) {
  std::vector<Scalar> d(sq_distances.derived().data(), sq_distances.derived().data() + sq_distances.size());
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  Scalar median = std::sqrt(d[d.size() / 2]);
  if (median > Scalar(0)) return median;
  const Scalar largest = std::sqrt(sq_distances.maxCoeff());
  return largest > Scalar(0) ? largest : Scalar(1);
}

}  // namespace detail

inline constexpr double kDefaultPerplexityTolerance = 1e-4;
inline constexpr int kDefaultCalibrationIterations = 64;

/// Bisection on log sigma over [1e-8, 1e8] x the row's median distance until
/// the achieved perplexity is within `tol` of the target.
template <typename Scalar>
SigmaCalibration<Scalar> calibrate_sigma(const Vector<Scalar>& sq_distances, Scalar perplexity_target,
                                         Scalar tol = Scalar(kDefaultPerplexityTolerance),
                                         int max_iter = kDefaultCalibrationIterations) {
  const Index n = sq_distances.size();
  if (n < 2 || !(perplexity_target > Scalar(1)) || perplexity_target > Scalar(n)) {
    fail(ErrorCode::PerplexityOutOfRange, "calibrate_sigma: perplexity target " +
                                              std::to_string(double(perplexity_target)) + " outside (1, " +
                                              std::to_string(n) + ")");
  }
  if (!(tol > 0) || max_iter < 1) fail(ErrorCode::ConfigInvalid, "calibrate_sigma: invalid tolerance");

  const Scalar scale = detail::reference_scale<Scalar>(sq_distances);
  const bool equidistant = sq_distances.maxCoeff() == sq_distances.minCoeff();
  if (equidistant) {
    // Every bandwidth gives the uniform row; perplexity is exactly n.
    return {scale, Scalar(n), perplexity_target != Scalar(n), 0};
  }
  if (perplexity_target >= Scalar(n)) {
    fail(ErrorCode::PerplexityOutOfRange, "calibrate_sigma: target must be below the row length");
  }

  Scalar lo = std::log(Scalar(1e-8) * scale);
  Scalar hi = std::log(Scalar(1e8) * scale);
  const Scalar perp_lo = row_perplexity(sq_distances, std::exp(lo));
  const Scalar perp_hi = row_perplexity(sq_distances, std::exp(hi));
  if (perplexity_target < perp_lo - tol) return {std::exp(lo), perp_lo, true, 0};
  if (perplexity_target > perp_hi + tol) return {std::exp(hi), perp_hi, true, 0};

  SigmaCalibration<Scalar> out;
  for (int it = 1; it <= max_iter; ++it) {
    const Scalar mid = Scalar(0.5) * (lo + hi);
    const Scalar perp = row_perplexity(sq_distances, std::exp(mid));
    out = {std::exp(mid), perp, false, it};
    if (std::abs(perp - perplexity_target) <= tol) break;
    if (perp < perplexity_target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return out;
}

/// Pairwise squared distances via ||a||^2 + ||b||^2 - 2 a.b, negatives clamped to 0.
template <typename Scalar, typename DerivedA, typename DerivedB>
Matrix<Scalar> squared_distances(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  require_dim(b.cols(), a.cols(), "squared_distances");
  const Vector<Scalar> na = a.rowwise().squaredNorm().template cast<Scalar>();
  const Vector<Scalar> nb = b.rowwise().squaredNorm().template cast<Scalar>();
  Matrix<Scalar> d = Scalar(-2) * (a.template cast<Scalar>() * b.template cast<Scalar>().transpose());
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(Scalar(0));
}

/// Row i is the neighbourhood distribution of unlabelled embedding i over the
/// labelled embeddings (columns).
template <typename Scalar>
struct NeighborhoodModel {
  Matrix<Scalar> prob;
  Vector<Scalar> sigma;
  Scalar perplexity_target{0};
  Vector<Scalar> achieved_perplexity;
  std::vector<bool> degenerate;
  std::vector<Id> labelled_ids;

  Index rows() const noexcept { return prob.rows(); }
  Index cols() const noexcept { return prob.cols(); }
};

namespace detail {

template <typename Scalar>
std::vector<Id> column_ids(std::span<const Id> ids, Index cols) {
  if (ids.empty()) {
    std::vector<Id> out(static_cast<std::size_t>(cols));
    for (Index j = 0; j < cols; ++j) out[static_cast<std::size_t>(j)] = j;
    return out;
  }
  if (static_cast<Index>(ids.size()) != cols) fail(ErrorCode::LengthMismatch, "labelled ids vs embeddings");
  return {ids.begin(), ids.end()};
}

template <typename Scalar, typename DerivedU, typename DerivedL>
Matrix<Scalar> checked_distances(const Eigen::MatrixBase<DerivedU>& h_unlabelled,
                                 const Eigen::MatrixBase<DerivedL>& h_labelled) {
  if (h_labelled.rows() == 0) fail(ErrorCode::EmptyLabelledPool, "conditional_probabilities: no labelled points");
  require_dim(h_labelled.cols(), h_unlabelled.cols(), "conditional_probabilities");
  return squared_distances<Scalar>(h_unlabelled, h_labelled);
}

}  // namespace detail

/// Neighbourhood rows normalised over labelled columns only, each row's
/// bandwidth calibrated to `perplexity_target`.
template <typename Scalar, typename DerivedU, typename DerivedL>
NeighborhoodModel<Scalar> conditional_probabilities(const Eigen::MatrixBase<DerivedU>& h_unlabelled,
                                                    const Eigen::MatrixBase<DerivedL>& h_labelled,
                                                    Scalar perplexity_target,
                                                    Scalar tol = Scalar(kDefaultPerplexityTolerance),
                                                    int max_iter = kDefaultCalibrationIterations,
                                                    std::span<const Id> labelled_ids = {}) {
  const Matrix<Scalar> d = detail::checked_distances<Scalar>(h_unlabelled, h_labelled);
  NeighborhoodModel<Scalar> nm;
  nm.prob.resize(d.rows(), d.cols());
  nm.sigma.resize(d.rows());
  nm.achieved_perplexity.resize(d.rows());
  nm.degenerate.resize(static_cast<std::size_t>(d.rows()));
  nm.perplexity_target = perplexity_target;
  nm.labelled_ids = detail::column_ids<Scalar>(labelled_ids, d.cols());
  for (Index i = 0; i < d.rows(); ++i) {
    const Vector<Scalar> row = d.row(i).transpose();
    const auto cal = calibrate_sigma<Scalar>(row, perplexity_target, tol, max_iter);
    Vector<Scalar> p;
    row_perplexity(row, cal.sigma, &p);
    nm.prob.row(i) = p.transpose();
    nm.sigma(i) = cal.sigma;
    nm.achieved_perplexity(i) = cal.achieved;
    nm.degenerate[static_cast<std::size_t>(i)] = cal.degenerate;
  }
  return nm;
}

/// Same rows with one bandwidth shared by every row (calibration bypassed).
template <typename Scalar, typename DerivedU, typename DerivedL>
NeighborhoodModel<Scalar> conditional_probabilities_fixed_sigma(const Eigen::MatrixBase<DerivedU>& h_unlabelled,
                                                                const Eigen::MatrixBase<DerivedL>& h_labelled,
                                                                Scalar sigma, std::span<const Id> labelled_ids = {}) {
  if (!(sigma > Scalar(0))) fail(ErrorCode::ConfigInvalid, "bandwidth must be positive");
  const Matrix<Scalar> d = detail::checked_distances<Scalar>(h_unlabelled, h_labelled);
  NeighborhoodModel<Scalar> nm;
  nm.prob.resize(d.rows(), d.cols());
  nm.sigma = Vector<Scalar>::Constant(d.rows(), sigma);
  nm.achieved_perplexity.resize(d.rows());
  nm.degenerate.assign(static_cast<std::size_t>(d.rows()), false);
  nm.perplexity_target = std::numeric_limits<Scalar>::quiet_NaN();
  nm.labelled_ids = detail::column_ids<Scalar>(labelled_ids, d.cols());
  for (Index i = 0; i < d.rows(); ++i) {
    Vector<Scalar> p;
    nm.achieved_perplexity(i) = row_perplexity(Vector<Scalar>(d.row(i).transpose()), sigma, &p);
    nm.prob.row(i) = p.transpose();
  }
  return nm;
}

/// K most probable labelled neighbours per row, renormalised to sum 1.
template <typename Scalar>
struct TruncatedNeighborhood {
  Matrix<Scalar> prob;                                     // |U| x K
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> columns;  // labelled column per entry
  std::vector<Id> labelled_ids;

  Id label_id(Index row, Index k) const { return labelled_ids[static_cast<std::size_t>(columns(row, k))]; }
};

template <typename Scalar>
TruncatedNeighborhood<Scalar> top_k_truncate(const NeighborhoodModel<Scalar>& model, Index k) {
  if (k < 1 || k > model.cols()) {
    fail(ErrorCode::KExceedsPool,
         "top_k_truncate: K=" + std::to_string(k) + " with " + std::to_string(model.cols()) + " labelled");
  }
  TruncatedNeighborhood<Scalar> out;
  out.prob.resize(model.rows(), k);
  out.columns.resize(model.rows(), k);
  out.labelled_ids = model.labelled_ids;
  std::vector<Scalar> row(static_cast<std::size_t>(model.cols()));
  for (Index i = 0; i < model.rows(); ++i) {
    for (Index j = 0; j < model.cols(); ++j) row[static_cast<std::size_t>(j)] = model.prob(i, j);
    const auto top =
        top_indices(std::span<const Scalar>(row), std::span<const Id>(model.labelled_ids), k);
    Scalar mass(0);
    for (Index c : top) mass += row[static_cast<std::size_t>(c)];
    for (Index c = 0; c < k; ++c) {
      const Index col = top[static_cast<std::size_t>(c)];
      out.columns(i, c) = col;
      out.prob(i, c) = row[static_cast<std::size_t>(col)] / mass;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-example gradients
// ---------------------------------------------------------------------------

/// One forward/backward pass of the prediction output. Stores each linear
/// layer's input a_l and the sensitivity d f / d z_l; the loss gradient for a
/// label y is (f(x) - y) times these sensitivities.
template <typename Scalar>
struct GradientCache {
  Scalar prediction{0};
  std::vector<Vector<Scalar>> inputs;
  std::vector<Vector<Scalar>> sensitivities;

  /// ||grad_theta f(x)||^2 over weights and biases of every linear layer.
  Scalar output_grad_norm_sq() const {
    Scalar total(0);
    for (std::size_t l = 0; l < inputs.size(); ++l) {
      total += sensitivities[l].squaredNorm() * (inputs[l].squaredNorm() + Scalar(1));
    }
    return total;
  }

  /// ||grad_theta 1/2 (f(x) - y)^2||^2.
  Scalar grad_norm_sq(Scalar label) const {
    const Scalar r = prediction - label;
    return r * r * output_grad_norm_sq();
  }
};

template <typename Scalar, typename Derived>
GradientCache<Scalar> gradient_cache(const LinearModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  require_dim(x.size(), model.dim(), "gradient_cache");
  GradientCache<Scalar> cache;
  cache.prediction = predict_linear(model, x).mean;
  cache.inputs.push_back(x.template cast<Scalar>());
  cache.sensitivities.push_back(Vector<Scalar>::Ones(1));
  return cache;
}

template <typename Scalar, typename Derived>
GradientCache<Scalar> gradient_cache(const MlpModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  auto out = mlp_forward(model, x);
  Vector<Scalar> seed = Vector<Scalar>::Zero(model.output_dim());
  seed(0) = Scalar(1);
  GradientCache<Scalar> cache;
  cache.prediction = out.prediction;
  cache.sensitivities = mlp_backward(model, out.cache, seed);
  cache.inputs = std::move(out.cache.inputs);
  return cache;
}

/// Squared norm of the per-example gradient of 1/2 (f(x) - y)^2.
template <typename Model, typename Derived>
auto per_example_grad_norm_sq(const Model& model, const Eigen::MatrixBase<Derived>& x,
                              typename Derived::Scalar label) {
  return gradient_cache(model, x).grad_norm_sq(label);
}

// ---------------------------------------------------------------------------
// EGL++ scoring
// ---------------------------------------------------------------------------

struct EglppConfig {
  double perplexity{30.0};
  Index k{10};
  double tol{kDefaultPerplexityTolerance};
  int max_iter{kDefaultCalibrationIterations};
};

/// Perplexity actually used for a labelled pool of the given size.
inline double effective_perplexity(double target, Index labelled) {
  return std::min(target, std::max(double(labelled) - 1.0, 1.5));
}

template <typename Model, typename Scalar>
Matrix<Scalar> embed_all(const Model& model, const Dataset<Scalar>& data) {
  Matrix<Scalar> h;
  for (Index i = 0; i < data.size(); ++i) {
    const Vector<Scalar> e = embed(model, data.x(i));
    if (i == 0) h.resize(data.size(), e.size());
    h.row(i) = e.transpose();
  }
  return h;
}

/// Expected squared gradient norm of each unlabelled point under its
/// top-K neighbourhood distribution over labelled targets.
template <typename Model, typename Scalar>
Vector<Scalar> eglpp_scores(const Model& model, const Dataset<Scalar>& labelled, const Dataset<Scalar>& unlabelled,
                            const EglppConfig& config = {}) {
  if (labelled.size() < 2) fail(ErrorCode::EmptyLabelledPool, "eglpp_scores: need at least two labelled points");
  if (unlabelled.empty()) return {};
  require_dim(unlabelled.dim(), labelled.dim(), "eglpp_scores");
  const Matrix<Scalar> h_labelled = embed_all(model, labelled);
  const Matrix<Scalar> h_unlabelled = embed_all(model, unlabelled);
  const auto neighborhood = conditional_probabilities<Scalar>(
      h_unlabelled, h_labelled, Scalar(effective_perplexity(config.perplexity, labelled.size())),
      Scalar(config.tol), config.max_iter, std::span<const Id>(labelled.ids()));
  const auto top = top_k_truncate(neighborhood, std::min(config.k, labelled.size()));

  Vector<Scalar> scores(unlabelled.size());
  for (Index i = 0; i < unlabelled.size(); ++i) {
    const auto cache = gradient_cache(model, unlabelled.x(i));
    Scalar s(0);
    for (Index c = 0; c < top.prob.cols(); ++c) {
      s += top.prob(i, c) * cache.grad_norm_sq(labelled.y(top.columns(i, c)));
    }
    scores(i) = s;
  }
  return scores;
}

/// Unlabelled ids of the B largest scores; ties go to the lower id.
template <typename Scalar>
std::vector<Id> select_top_b(const Vector<Scalar>& scores, std::span<const Id> ids, Index budget) {
  return select_batch(std::span<const Scalar>(scores.data(), static_cast<std::size_t>(scores.size())), ids, budget);
}

}  // namespace egl

#endif  // EGL_EGLPP_HPP
