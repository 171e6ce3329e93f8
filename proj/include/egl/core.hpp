#ifndef EGL_CORE_HPP
#define EGL_CORE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace egl {

using Index = Eigen::Index;
using Id = std::int64_t;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class ErrorCode {
  DimensionMismatch,
  RankDeficient,
  TooFewPoints,
  NonPositiveVariance,
  EmptyDataset,
  NotPositiveDefinite,
  UnfittableResample,
  NonLinearMember,
  NegativeGradNorm,
  BudgetExceedsPool,
  PerplexityOutOfRange,
  EmptyLabelledPool,
  KExceedsPool,
  LengthMismatch,
  TooFewPairs,
  ConfigInvalid,
  DataInvalid,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::NonPositiveVariance: return "NonPositiveVariance";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::UnfittableResample: return "UnfittableResample";
    case ErrorCode::NonLinearMember: return "NonLinearMember";
    case ErrorCode::NegativeGradNorm: return "NegativeGradNorm";
    case ErrorCode::BudgetExceedsPool: return "BudgetExceedsPool";
    case ErrorCode::PerplexityOutOfRange: return "PerplexityOutOfRange";
    case ErrorCode::EmptyLabelledPool: return "EmptyLabelledPool";
    case ErrorCode::KExceedsPool: return "KExceedsPool";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewPairs: return "TooFewPairs";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::DataInvalid: return "DataInvalid";
  }
  return "Unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require_dim(Index got, Index expected, const char* where) {
  if (got != expected) {
    fail(ErrorCode::DimensionMismatch, std::string(where) + ": expected dimension " +
                                           std::to_string(expected) + ", got " + std::to_string(got));
  }
}

/// Gaussian predictive parameters of one model at one input.
template <typename Scalar>
struct Gaussian {
  Scalar mean{0};
  Scalar variance{0};
};

// SplitMix64 finalizer; stable across platforms and standard libraries.
inline std::uint64_t mix_seed(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a tuple of integers.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts) h = mix_seed(h ^ mix_seed(p));
  return h;
}

template <typename Scalar>
struct DataPoint {
  Vector<Scalar> features;
  Scalar target{0};
};

/// Row-major collection of labelled points with stable integer ids.
template <typename Scalar>
class Dataset {
 public:
  Dataset() = default;

  Dataset(Matrix<Scalar> features, Vector<Scalar> targets, std::vector<Id> ids)
      : features_(std::move(features)), targets_(std::move(targets)), ids_(std::move(ids)) {
    if (features_.rows() != targets_.size() || static_cast<Index>(ids_.size()) != targets_.size()) {
      fail(ErrorCode::LengthMismatch, "Dataset: features, targets and ids differ in length");
    }
    if (!features_.allFinite() || !targets_.allFinite()) {
      fail(ErrorCode::DataInvalid, "Dataset: non-finite feature or target");
    }
    std::unordered_set<Id> seen;
    for (Id id : ids_) {
      if (!seen.insert(id).second) fail(ErrorCode::DataInvalid, "Dataset: duplicate id " + std::to_string(id));
    }
  }

  /// Ids default to 0..n-1.
  Dataset(Matrix<Scalar> features, Vector<Scalar> targets)
      : Dataset(features, targets, sequential_ids(targets.size())) {}

  static Dataset from_points(std::span<const DataPoint<Scalar>> points, std::vector<Id> ids) {
    const Index n = static_cast<Index>(points.size());
    const Index d = n == 0 ? 0 : points.front().features.size();
    Matrix<Scalar> x(n, d);
    Vector<Scalar> y(n);
    for (Index i = 0; i < n; ++i) {
      require_dim(points[i].features.size(), d, "Dataset::from_points");
      x.row(i) = points[i].features.transpose();
      y(i) = points[i].target;
    }
    return Dataset(std::move(x), std::move(y), std::move(ids));
  }

  Index size() const noexcept { return targets_.size(); }
  Index dim() const noexcept { return features_.cols(); }
  bool empty() const noexcept { return size() == 0; }

  const Matrix<Scalar>& features() const noexcept { return features_; }
  const Vector<Scalar>& targets() const noexcept { return targets_; }
  const std::vector<Id>& ids() const noexcept { return ids_; }

  auto x(Index i) const { return features_.row(i).transpose(); }
  Scalar y(Index i) const { return targets_(i); }
  Id id(Index i) const { return ids_[static_cast<std::size_t>(i)]; }
  DataPoint<Scalar> point(Index i) const { return {x(i), y(i)}; }

  /// Rows in the given order; rows must be distinct.
  Dataset select(std::span<const Index> rows) const {
    Matrix<Scalar> x(static_cast<Index>(rows.size()), dim());
    Vector<Scalar> y(static_cast<Index>(rows.size()));
    std::vector<Id> ids;
    ids.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x.row(static_cast<Index>(r)) = features_.row(rows[r]);
      y(static_cast<Index>(r)) = targets_(rows[r]);
      ids.push_back(ids_[static_cast<std::size_t>(rows[r])]);
    }
    return Dataset(std::move(x), std::move(y), std::move(ids));
  }

  /// Appends the rows of `other`; dimensions must agree and ids stay unique.
  Dataset concat(const Dataset& other) const {
    if (empty()) return other;
    if (other.empty()) return *this;
    require_dim(other.dim(), dim(), "Dataset::concat");
    Matrix<Scalar> x(size() + other.size(), dim());
    x << features_, other.features_;
    Vector<Scalar> y(size() + other.size());
    y << targets_, other.targets_;
    std::vector<Id> ids = ids_;
    ids.insert(ids.end(), other.ids_.begin(), other.ids_.end());
    return Dataset(std::move(x), std::move(y), std::move(ids));
  }

 private:
  static std::vector<Id> sequential_ids(Index n) {
    std::vector<Id> ids(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    return ids;
  }

  Matrix<Scalar> features_;
  Vector<Scalar> targets_;
  std::vector<Id> ids_;
};

/// Indices of the `count` largest values; ties go to the smaller key.
template <typename Scalar>
std::vector<Index> top_indices(std::span<const Scalar> values, std::span<const Id> keys, Index count) {
  if (values.size() != keys.size()) fail(ErrorCode::LengthMismatch, "top_indices: values and keys differ");
  if (count < 0 || count > static_cast<Index>(values.size())) {
    fail(ErrorCode::BudgetExceedsPool, "requested " + std::to_string(count) + " of " +
                                           std::to_string(values.size()) + " candidates");
  }
  std::vector<Index> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  auto better = [&](Index a, Index b) {
    const auto va = values[static_cast<std::size_t>(a)];
    const auto vb = values[static_cast<std::size_t>(b)];
    if (va != vb) return va > vb;
    return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
  };
  std::partial_sort(order.begin(), order.begin() + count, order.end(), better);
  order.resize(static_cast<std::size_t>(count));
  return order;
}

}  // namespace egl

#endif  // EGL_CORE_HPP
