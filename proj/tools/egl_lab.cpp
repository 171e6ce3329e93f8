// egl-lab: active-learning simulations, candidate scoring and paired t-tests.

#include "egl/harness.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <unordered_set>

namespace {

using namespace egl;
using namespace egl::harness;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::DataInvalid, "cannot write '" + path + "'");
  return out;
}

int simulate(const std::string& config_path, const std::string& curves_path, const std::string& summary_path) {
  const auto config = load_config(config_path);
  const auto records = run_simulation(config);
  if (curves_path.empty()) {
    write_curves_csv(std::cout, records);
  } else {
    auto out = open_output(curves_path);
    write_curves_csv(out, records);
  }
  if (!summary_path.empty()) {
    auto out = open_output(summary_path);
    out << summarize_json(records) << '\n';
  }
  return 0;
}

int score(const std::string& strategy_name, const std::string& data_path, const std::string& ids_path,
          const std::string& out_path, const std::string& config_path, std::uint64_t seed,
          const std::string& embeddings_path) {
  SimulationConfig config = config_path.empty() ? SimulationConfig{} : load_config(config_path);
  const Strategy strategy = parse_strategy(strategy_name);
  config.strategies = {strategy};
  const Data data = read_dataset_csv(data_path);
  const auto labelled_ids = read_ids_csv(ids_path);

  std::unordered_set<Id> wanted(labelled_ids.begin(), labelled_ids.end());
  std::vector<Index> labelled_rows, unlabelled_rows;
  for (Index i = 0; i < data.size(); ++i) (wanted.count(data.id(i)) ? labelled_rows : unlabelled_rows).push_back(i);
  if (labelled_rows.size() != wanted.size()) fail(ErrorCode::DataInvalid, "labelled ids not found in dataset");
  if (labelled_rows.empty()) fail(ErrorCode::DataInvalid, "no labelled ids");

  // Labelled rows follow the order of the ids file.
  std::unordered_map<Id, Index> row_of;
  for (Index r : labelled_rows) row_of.emplace(data.id(r), r);
  labelled_rows.clear();
  for (Id id : labelled_ids) labelled_rows.push_back(row_of.at(id));

  PoolState state;
  state.labelled = data.select(labelled_rows);
  state.unlabelled = data.select(unlabelled_rows);
  validate(config, std::numeric_limits<Index>::max() / 4);
  const auto model = fit_model(config.model, state.labelled, full_model_stream(seed, 0));
  const auto scores = score_candidates(state, strategy, config, model, strategy_stream(seed, strategy, 0));
  if (out_path.empty()) {
    write_scores_csv(std::cout, scores);
  } else {
    auto out = open_output(out_path);
    write_scores_csv(out, scores);
  }
  if (!embeddings_path.empty()) {
    auto out = open_output(embeddings_path);
    write_embedding_csv(out, state, model);
  }
  return 0;
}

int ttest(const std::string& a_path, const std::string& b_path) {
  const auto a = read_values_csv(a_path);
  const auto b = read_values_csv(b_path);
  const auto r = paired_t_test(a, b);
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["df"] = r.df;
  j["p_one_tailed"] = r.p_one_tailed;
  j["degenerate"] = r.degenerate;
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expected-gradient-length active learning laboratory"};
  app.require_subcommand(1);

  std::string config_path, curves_path, summary_path;
  auto* sim = app.add_subcommand("simulate", "Run the active-learning simulation described by a JSON config");
  sim->add_option("--config", config_path, "Simulation config (JSON)")->required();
  sim->add_option("--curves", curves_path, "Learning-curve CSV (default: stdout)");
  sim->add_option("--summary", summary_path, "Summary JSON with per-cycle statistics and p-values");

  std::string strategy, data_path, ids_path, out_path, score_config, embeddings_path;
  std::uint64_t seed = 0;
  auto* sc = app.add_subcommand("score", "Score unlabelled candidates of a dataset");
  sc->add_option("--strategy", strategy, "Acquisition strategy")->required();
  sc->add_option("--data", data_path, "Dataset CSV (id,f0,...,y)")->required();
  sc->add_option("--labelled-ids", ids_path, "CSV of labelled ids")->required();
  sc->add_option("--out", out_path, "Score CSV (default: stdout)");
  sc->add_option("--config", score_config, "Config JSON for model/ensemble settings");
  sc->add_option("--seed", seed, "Seed for model fitting and sampling");
  sc->add_option("--embeddings", embeddings_path, "Write embeddings CSV (id,pool,h0,...)");

  std::string a_path, b_path;
  auto* tt = app.add_subcommand("ttest", "Paired one-tailed t-test that mean(a - b) > 0");
  tt->add_option("--a", a_path, "CSV of values a")->required();
  tt->add_option("--b", b_path, "CSV of values b")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (sim->parsed()) return simulate(config_path, curves_path, summary_path);
    if (sc->parsed()) return score(strategy, data_path, ids_path, out_path, score_config, seed, embeddings_path);
    if (tt->parsed()) return ttest(a_path, b_path);
  } catch (const egl::Error& e) {
    std::cerr << "error (" << egl::to_string(e.code()) << "): " << e.what() << '\n';
    return e.code() == egl::ErrorCode::ConfigInvalid ? kExitConfig : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
