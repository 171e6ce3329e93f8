#include "egl/harness.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <charconv>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>

namespace egl::harness {

namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 6> kStrategyNames{{
    {Strategy::Random, "random"},
    {Strategy::PredictiveVariance, "predictive_variance"},
    {Strategy::EglCai, "egl_cai"},
    {Strategy::EglClosedForm, "egl_closed_form"},
    {Strategy::EglMonteCarlo, "egl_monte_carlo"},
    {Strategy::Eglpp, "eglpp"},
}};

Ensemble<double> member_ensemble(const PoolState& state, const SimulationConfig& config,
                                 const Model<double>& full_model, std::uint64_t stream) {
  BootstrapOptions options;
  options.variance_source = config.variance_source;
  auto [members, resamples] = bootstrap_members(state.labelled, config.ensemble_k, config.model, stream, options);
  auto ensemble = make_ensemble(std::move(members), full_model, config.variance_source);
  ensemble.resamples = std::move(resamples);
  return ensemble;
}

}  // namespace

std::string_view to_string(Strategy s) {
  for (const auto& [value, name] : kStrategyNames)
    if (value == s) return name;
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (const auto& [value, text] : kStrategyNames)
    if (text == name) return value;
  fail(ErrorCode::ConfigInvalid, "unknown strategy '" + std::string(name) + "'");
}

PoolState make_initial_pool(const Data& pool, Index initial_labelled, std::uint64_t seed) {
  if (initial_labelled < 1 || initial_labelled > pool.size()) {
    fail(ErrorCode::BudgetExceedsPool, "make_initial_pool: initial_labelled outside [1, pool size]");
  }
  std::vector<Index> order(static_cast<std::size_t>(pool.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(derive_seed({seed, 0x696e6974}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> labelled(order.begin(), order.begin() + initial_labelled);
  std::vector<Index> rest(order.begin() + initial_labelled, order.end());
  std::sort(rest.begin(), rest.end());
  PoolState state;
  state.labelled = pool.select(labelled);
  state.unlabelled = pool.select(rest);
  return state;
}

PoolState annotate(const PoolState& state, std::span<const Id> ids) {
  std::unordered_map<Id, Index> row_of;
  for (Index i = 0; i < state.unlabelled.size(); ++i) row_of.emplace(state.unlabelled.id(i), i);
  std::vector<Index> picked;
  std::vector<bool> taken(static_cast<std::size_t>(state.unlabelled.size()), false);
  for (Id id : ids) {
    auto it = row_of.find(id);
    if (it == row_of.end() || taken[static_cast<std::size_t>(it->second)]) {
      fail(ErrorCode::DataInvalid, "annotate: id " + std::to_string(id) + " is not an unlabelled candidate");
    }
    taken[static_cast<std::size_t>(it->second)] = true;
    picked.push_back(it->second);
  }
  std::vector<Index> rest;
  for (Index i = 0; i < state.unlabelled.size(); ++i)
    if (!taken[static_cast<std::size_t>(i)]) rest.push_back(i);

  PoolState next;
  next.labelled = state.labelled.concat(state.unlabelled.select(picked));
  next.unlabelled = state.unlabelled.select(rest);
  next.cycle = state.cycle + 1;
  next.history = state.history;
  next.history.emplace_back(state.cycle, std::vector<Id>(ids.begin(), ids.end()));
  return next;
}

std::pair<Data, Data> split_holdout(const Data& data, double test_fraction, std::uint64_t split_seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::ConfigInvalid, "test_fraction must lie in (0, 1)");
  }
  const Index n_test = static_cast<Index>(std::llround(test_fraction * double(data.size())));
  if (n_test < 1 || n_test >= data.size()) fail(ErrorCode::ConfigInvalid, "held-out split leaves an empty side");
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(derive_seed({split_seed, 0x74657374}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> test(order.begin(), order.begin() + n_test);
  std::vector<Index> pool(order.begin() + n_test, order.end());
  std::sort(test.begin(), test.end());
  std::sort(pool.begin(), pool.end());
  return {data.select(pool), data.select(test)};
}

std::uint64_t full_model_stream(std::uint64_t seed, int cycle) {
  return derive_seed({seed, static_cast<std::uint64_t>(cycle), 0x66756c6c});
}

std::uint64_t strategy_stream(std::uint64_t seed, Strategy strategy, int cycle) {
  return derive_seed({seed, static_cast<std::uint64_t>(strategy), static_cast<std::uint64_t>(cycle), 0x73747261});
}

CandidateScores score_candidates(const PoolState& state, Strategy strategy, const SimulationConfig& config,
                                 const Model<double>& full_model, std::uint64_t stream) {
  const Data& pool = state.unlabelled;
  CandidateScores out;
  out.ids = pool.ids();
  out.scores.resize(static_cast<std::size_t>(pool.size()));
  auto each = [&](auto&& score_of) {
    for (Index i = 0; i < pool.size(); ++i) out.scores[static_cast<std::size_t>(i)] = score_of(i);
  };

  switch (strategy) {
    case Strategy::Random: {
      std::mt19937_64 rng(stream);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      each([&](Index) { return u(rng); });
      break;
    }
    case Strategy::PredictiveVariance: {
      const auto ens = member_ensemble(state, config, full_model, stream);
      each([&](Index i) { return predictive_variance(ens, pool.x(i)); });
      break;
    }
    case Strategy::EglCai: {
      const auto ens = member_ensemble(state, config, full_model, stream);
      each([&](Index i) { return score_cai(ens, pool.x(i)); });
      break;
    }
    case Strategy::EglMonteCarlo: {
      const auto ens = member_ensemble(state, config, full_model, stream);
      each([&](Index i) { return score_monte_carlo(ens, pool.x(i), config.mc_samples, stream, pool.id(i)); });
      break;
    }
    case Strategy::EglClosedForm: {
      const auto ens = member_ensemble(state, config, full_model, stream);
      for (Index i = 0; i < pool.size(); ++i) {
        EglScore<double> s;
        if (const auto* mlp = std::get_if<MlpModel<double>>(&full_model)) {
          const double g = gradient_cache(*mlp, pool.x(i)).output_grad_norm_sq();
          s = score_closed_form_nonlinear(ens, pool.x(i), g, pool.id(i));
        } else {
          s = score_closed_form_linear(ens, pool.x(i), pool.id(i));
        }
        out.scores[static_cast<std::size_t>(i)] = s.score;
        out.components.push_back(s);
      }
      break;
    }
    case Strategy::Eglpp: {
      VectorXd scores;
      if (const auto* mlp = std::get_if<MlpModel<double>>(&full_model)) {
        scores = eglpp_scores(*mlp, state.labelled, pool, config.eglpp);
      } else if (const auto* lin = std::get_if<LinearModel<double>>(&full_model)) {
        scores = eglpp_scores(*lin, state.labelled, pool, config.eglpp);
      } else {
        fail(ErrorCode::ConfigInvalid, "eglpp requires a linear or mlp model");
      }
      each([&](Index i) { return scores(i); });
      break;
    }
  }
  return out;
}

PoolState run_cycle_with_model(const PoolState& state, Strategy strategy, const SimulationConfig& config,
                               std::uint64_t seed, const Model<double>& full_model) {
  if (config.budget_per_cycle > state.unlabelled.size()) {
    fail(ErrorCode::BudgetExceedsPool, "run_cycle: budget " + std::to_string(config.budget_per_cycle) +
                                           " exceeds " + std::to_string(state.unlabelled.size()) + " candidates");
  }
  const auto scores = score_candidates(state, strategy, config, full_model, strategy_stream(seed, strategy, state.cycle));
  const auto picked = select_batch(std::span<const double>(scores.scores), std::span<const Id>(scores.ids),
                                   config.budget_per_cycle);
  return annotate(state, picked);
}

PoolState run_cycle(const PoolState& state, Strategy strategy, const SimulationConfig& config, std::uint64_t seed) {
  if (config.budget_per_cycle > state.unlabelled.size()) {
    fail(ErrorCode::BudgetExceedsPool, "run_cycle: budget exceeds the unlabelled pool");
  }
  const auto model = fit_model(config.model, state.labelled, full_model_stream(seed, state.cycle));
  return run_cycle_with_model(state, strategy, config, seed, model);
}

std::vector<CurveRecord> run_simulation(const SimulationConfig& config) {
  return run_simulation(config, load_dataset(config));
}

std::vector<CurveRecord> run_simulation(const SimulationConfig& config, const Data& data) {
  validate(config, data.size());
  const auto [pool, test] = split_holdout(data, config.test_fraction, config.split_seed);
  std::vector<std::vector<CurveRecord>> per_strategy(config.strategies.size());
  for (std::uint64_t seed : config.seeds) {
    const PoolState initial = make_initial_pool(pool, config.initial_labelled, seed);
    const auto base = fit_model(config.model, initial.labelled, full_model_stream(seed, 0));
    const double base_rmse = rmse(base, test);
    for (std::size_t s = 0; s < config.strategies.size(); ++s) {
      const Strategy strategy = config.strategies[s];
      const std::string name(to_string(strategy));
      PoolState state = initial;
      for (int cycle = 0;; ++cycle) {
        const auto model =
            cycle == 0 ? base : fit_model(config.model, state.labelled, full_model_stream(seed, cycle));
        per_strategy[s].push_back(
            {name, seed, cycle, state.labelled.size(), cycle == 0 ? base_rmse : rmse(model, test)});
        if (cycle == config.cycles) break;
        state = run_cycle_with_model(state, strategy, config, seed, model);
      }
    }
  }
  std::vector<CurveRecord> records;
  for (auto& r : per_strategy) records.insert(records.end(), r.begin(), r.end());
  return records;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_curves_csv(std::ostream& out, std::span<const CurveRecord> records) {
  out << "strategy,seed,cycle,labelled_count,rmse\n";
  for (const auto& r : records) {
    out << r.strategy << ',' << r.seed << ',' << r.cycle << ',' << r.labelled_count << ',' << format_double(r.rmse)
        << '\n';
  }
}

std::string summarize_json(std::span<const CurveRecord> records) {
  using json = nlohmann::ordered_json;
  // strategy -> cycle -> rmse per seed (in seed order of appearance)
  std::vector<std::string> strategies;
  std::map<std::string, std::map<int, std::vector<double>>> values;
  std::map<std::string, std::map<int, Index>> counts;
  for (const auto& r : records) {
    if (std::find(strategies.begin(), strategies.end(), r.strategy) == strategies.end()) {
      strategies.push_back(r.strategy);
    }
    values[r.strategy][r.cycle].push_back(r.rmse);
    counts[r.strategy][r.cycle] = r.labelled_count;
  }

  json doc;
  json per = json::object();
  for (const auto& s : strategies) {
    json cycles = json::array();
    double auc = 0.0;
    double prev = 0.0;
    bool first = true;
    for (const auto& [cycle, v] : values[s]) {
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
      cycles.push_back({{"cycle", cycle}, {"labelled_count", counts[s][cycle]}, {"mean", mean}, {"sd", sd}});
      if (!first) auc += 0.5 * (prev + mean);
      prev = mean;
      first = false;
    }
    per[s] = {{"cycles", cycles}, {"auc", auc}};
  }
  doc["strategies"] = per;

  // p_values[A][B][c]: one-tailed paired p that A has lower rmse than B at cycle c.
  json pvals = json::object();
  for (const auto& a : strategies) {
    json row = json::object();
    for (const auto& b : strategies) {
      if (a == b) continue;
      json per_cycle = json::array();
      for (const auto& [cycle, va] : values[a]) {
        const auto& vb = values[b][cycle];
        if (va.size() != vb.size() || va.size() < 2) {
          per_cycle.push_back(nullptr);
          continue;
        }
        per_cycle.push_back(paired_t_test(vb, va).p_one_tailed);
      }
      row[b] = per_cycle;
    }
    pvals[a] = row;
  }
  doc["p_values"] = pvals;
  return doc.dump(2);
}

void write_scores_csv(std::ostream& out, const CandidateScores& scores) {
  out << "id,score,grad_factor,mean_sigma_sq,mean_disagreement_sq\n";
  for (std::size_t i = 0; i < scores.ids.size(); ++i) {
    out << scores.ids[i] << ',' << format_double(scores.scores[i]);
    if (scores.components.empty()) {
      out << ",,,\n";
    } else {
      const auto& c = scores.components[i];
      out << ',' << format_double(c.gradient_factor) << ',' << format_double(c.mean_sigma_sq) << ','
          << format_double(c.mean_disagreement_sq) << '\n';
    }
  }
}

void write_embedding_csv(std::ostream& out, const PoolState& state, const Model<double>& model) {
  auto embed_model = [&](const auto& x) -> VectorXd {
    if (const auto* mlp = std::get_if<MlpModel<double>>(&model)) return embed(*mlp, x);
    if (const auto* lin = std::get_if<LinearModel<double>>(&model)) return embed(*lin, x);
    fail(ErrorCode::ConfigInvalid, "embeddings require a linear or mlp model");
  };
  bool header = false;
  auto dump = [&](const Data& data, const char* pool) {
    for (Index i = 0; i < data.size(); ++i) {
      const VectorXd h = embed_model(data.x(i));
      if (!header) {
        out << "id,pool";
        for (Index j = 0; j < h.size(); ++j) out << ",h" << j;
        out << '\n';
        header = true;
      }
      out << data.id(i) << ',' << pool;
      for (Index j = 0; j < h.size(); ++j) out << ',' << format_double(h(j));
      out << '\n';
    }
  };
  dump(state.labelled, "labelled");
  dump(state.unlabelled, "unlabelled");
}

}  // namespace egl::harness
