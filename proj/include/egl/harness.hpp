#ifndef EGL_HARNESS_HPP
#define EGL_HARNESS_HPP

#include "egl/eglpp.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

namespace egl::harness {

using Data = Dataset<double>;
using VectorXd = Vector<double>;

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

enum class NoiseModel { Homoscedastic, Heteroscedastic };

struct SyntheticSpec {
  Index n{1200};
  Index d{2};
  NoiseModel noise{NoiseModel::Heteroscedastic};
  /// Multiplies the generator's noise standard deviation; 0 gives noiseless targets.
  double noise_scale{1.0};
  Index clusters{6};
  std::uint64_t seed{0};
};

/// Features from an equally weighted Gaussian mixture; targets are a smooth
/// nonlinear function plus Gaussian noise with standard deviation
/// `synthetic_noise_sd`.
Data generate_synthetic(const SyntheticSpec& spec);
double synthetic_mean(const VectorXd& x);
double synthetic_noise_sd(const SyntheticSpec& spec, const VectorXd& x);

// ---------------------------------------------------------------------------
// Pool bookkeeping
// ---------------------------------------------------------------------------

enum class Strategy { Random, PredictiveVariance, EglCai, EglClosedForm, EglMonteCarlo, Eglpp };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

struct PoolState {
  Data labelled;
  Data unlabelled;
  int cycle{0};
  std::vector<std::pair<int, std::vector<Id>>> history;
};

/// The first `initial_labelled` ids after a seeded shuffle become labelled.
PoolState make_initial_pool(const Data& pool, Index initial_labelled, std::uint64_t seed);

/// Moves `ids` from unlabelled to labelled, appends to history, advances the cycle.
PoolState annotate(const PoolState& state, std::span<const Id> ids);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SimulationConfig {
  std::optional<std::string> dataset_path;
  SyntheticSpec synthetic{};
  std::vector<Strategy> strategies{Strategy::Random, Strategy::PredictiveVariance, Strategy::EglClosedForm,
                                   Strategy::Eglpp};
  int cycles{5};
  Index budget_per_cycle{100};
  Index initial_labelled{100};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  ModelSpec model{default_model()};
  Index ensemble_k{10};
  VarianceSource variance_source{VarianceSource::AleatoricHead};
  EglppConfig eglpp{};
  Index mc_samples{1000};
  double test_fraction{0.2};
  std::uint64_t split_seed{0};

  static ModelSpec default_model();
};

/// Parses the JSON document; unknown keys and ill-typed values raise ConfigInvalid.
SimulationConfig parse_config(std::string_view json_text);
SimulationConfig load_config(const std::string& path);
std::string config_to_json(const SimulationConfig& config);

/// Checks pool-size and strategy/model compatibility against a dataset size.
void validate(const SimulationConfig& config, Index dataset_size);

Data load_dataset(const SimulationConfig& config);

/// Deterministic split into (pool, held-out test) by `split_seed`.
std::pair<Data, Data> split_holdout(const Data& data, double test_fraction, std::uint64_t split_seed);

// ---------------------------------------------------------------------------
// Scoring and cycles
// ---------------------------------------------------------------------------

struct CandidateScores {
  std::vector<Id> ids;
  std::vector<double> scores;
  /// Filled for the closed-form EGL strategy only.
  std::vector<EglScore<double>> components;
};

/// Scores every unlabelled candidate. `full_model` must be fitted on the
/// labelled pool; `stream` seeds members, Monte-Carlo labels and random picks.
CandidateScores score_candidates(const PoolState& state, Strategy strategy, const SimulationConfig& config,
                                 const Model<double>& full_model, std::uint64_t stream);

std::uint64_t full_model_stream(std::uint64_t seed, int cycle);
std::uint64_t strategy_stream(std::uint64_t seed, Strategy strategy, int cycle);

/// Train, score, annotate the top budget.
PoolState run_cycle(const PoolState& state, Strategy strategy, const SimulationConfig& config, std::uint64_t seed);

PoolState run_cycle_with_model(const PoolState& state, Strategy strategy, const SimulationConfig& config,
                               std::uint64_t seed, const Model<double>& full_model);

// ---------------------------------------------------------------------------
// Metrics and statistics
// ---------------------------------------------------------------------------

double rmse(const Model<double>& model, const Data& test);

struct TTestResult {
  double t{0};
  double p_one_tailed{0.5};
  Index df{0};
  bool degenerate{false};
};

/// Paired one-tailed t-test of H1: mean(a - b) > 0.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Upper tail P(T > t) for Student's t with `df` degrees of freedom.
double student_t_upper_tail(double t, double df);

struct CurveRecord {
  std::string strategy;
  std::uint64_t seed{0};
  int cycle{0};
  Index labelled_count{0};
  double rmse{0};
};

std::vector<CurveRecord> run_simulation(const SimulationConfig& config);
std::vector<CurveRecord> run_simulation(const SimulationConfig& config, const Data& data);

void write_curves_csv(std::ostream& out, std::span<const CurveRecord> records);
/// Per-cycle mean/sd per strategy and pairwise one-tailed p-values.
std::string summarize_json(std::span<const CurveRecord> records);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Header `id,f0,...,f{d-1},y`.
Data read_dataset_csv(std::istream& in);
Data read_dataset_csv(const std::string& path);
void write_dataset_csv(std::ostream& out, const Data& data);
std::vector<Id> read_ids_csv(const std::string& path);
std::vector<double> read_values_csv(const std::string& path);
void write_scores_csv(std::ostream& out, const CandidateScores& scores);
/// Header `id,pool,h0,...,h{m-1}`.
void write_embedding_csv(std::ostream& out, const PoolState& state, const Model<double>& model);

std::string format_double(double v);

}  // namespace egl::harness

#endif  // EGL_HARNESS_HPP
