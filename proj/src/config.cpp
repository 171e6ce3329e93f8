#include "egl/harness.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace egl::harness {

namespace {

using json = nlohmann::json;

[[noreturn]] void config_error(const std::string& what) { fail(ErrorCode::ConfigInvalid, "config: " + what); }

// Rejects keys outside `allowed` so typos surface instead of silently using defaults.
void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) config_error(where + " must be an object");
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      config_error("unknown key '" + where + "." + item.key() + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(std::string("key '") + key + "' has the wrong type");
  }
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  config_error("unknown activation '" + s + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "relu";
}

ModelKind parse_kind(const std::string& s) {
  if (s == "linear") return ModelKind::Linear;
  if (s == "mlp") return ModelKind::Mlp;
  if (s == "gp") return ModelKind::Gp;
  config_error("unknown model kind '" + s + "'");
}

std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Linear: return "linear";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Gp: return "gp";
  }
  return "linear";
}

ModelSpec parse_model(const json& j) {
  check_keys(j, "model", {"kind", "hidden", "activation", "aleatoric_head", "variance_floor", "train", "gp"});
  ModelSpec m = SimulationConfig::default_model();
  std::string kind = kind_name(m.kind);
  read(j, "kind", kind);
  m.kind = parse_kind(kind);
  std::vector<long long> hidden(m.hidden.begin(), m.hidden.end());
  read(j, "hidden", hidden);
  m.hidden.assign(hidden.begin(), hidden.end());
  std::string act = activation_name(m.activation);
  read(j, "activation", act);
  m.activation = parse_activation(act);
  read(j, "aleatoric_head", m.aleatoric_head);
  read(j, "variance_floor", m.variance_floor);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "model.train", {"epochs", "step_size", "momentum", "batch_size", "clip_norm"});
    read(t, "epochs", m.train.epochs);
    read(t, "step_size", m.train.step_size);
    read(t, "momentum", m.train.momentum);
    read(t, "batch_size", m.train.batch_size);
    read(t, "clip_norm", m.train.clip_norm);
  }
  if (j.contains("gp")) {
    const auto& g = j.at("gp");
    check_keys(g, "model.gp", {"lengthscale", "signal_variance", "noise_variance"});
    read(g, "lengthscale", m.gp.lengthscale);
    read(g, "signal_variance", m.gp.signal_variance);
    read(g, "noise_variance", m.gp.noise_variance);
  }
  for (auto h : m.hidden)
    if (h < 1) config_error("hidden widths must be positive");
  if (m.train.epochs < 0 || !(m.train.step_size > 0) || m.train.batch_size < 1 || !(m.variance_floor > 0)) {
    config_error("invalid training parameters");
  }
  if (!(m.gp.lengthscale > 0) || !(m.gp.signal_variance > 0) || !(m.gp.noise_variance >= 0)) {
    config_error("invalid gp hyperparameters");
  }
  return m;
}

json model_to_json(const ModelSpec& m) {
  return {{"kind", kind_name(m.kind)},
          {"hidden", m.hidden},
          {"activation", activation_name(m.activation)},
          {"aleatoric_head", m.aleatoric_head},
          {"variance_floor", m.variance_floor},
          {"train",
           {{"epochs", m.train.epochs},
            {"step_size", m.train.step_size},
            {"momentum", m.train.momentum},
            {"batch_size", m.train.batch_size},
            {"clip_norm", m.train.clip_norm}}},
          {"gp",
           {{"lengthscale", m.gp.lengthscale},
            {"signal_variance", m.gp.signal_variance},
            {"noise_variance", m.gp.noise_variance}}}};
}

}  // namespace

ModelSpec SimulationConfig::default_model() {
  ModelSpec m;
  m.kind = ModelKind::Mlp;
  m.hidden = {16};
  m.activation = Activation::Tanh;
  m.aleatoric_head = false;
  m.train.epochs = 800;
  m.train.step_size = 0.05;
  m.train.momentum = 0.9;
  m.train.batch_size = 32;
  return m;
}

SimulationConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    config_error(std::string("malformed JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"dataset", "strategies", "cycles", "budget_per_cycle", "initial_labelled", "seeds", "model", "ensemble_k",
              "variance_source", "eglpp", "mc_samples", "test_fraction", "split_seed"});
  SimulationConfig c;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, "dataset", {"path", "synthetic"});
    if (d.contains("path") == d.contains("synthetic")) config_error("dataset needs exactly one of path/synthetic");
    if (d.contains("path")) {
      std::string path;
      read(d, "path", path);
      c.dataset_path = path;
    } else {
      const auto& s = d.at("synthetic");
      check_keys(s, "dataset.synthetic", {"n", "d", "noise", "noise_scale", "clusters", "seed"});
      read(s, "n", c.synthetic.n);
      read(s, "d", c.synthetic.d);
      read(s, "noise_scale", c.synthetic.noise_scale);
      read(s, "clusters", c.synthetic.clusters);
      read(s, "seed", c.synthetic.seed);
      std::string noise = "heteroscedastic";
      read(s, "noise", noise);
      if (noise == "heteroscedastic") {
        c.synthetic.noise = NoiseModel::Heteroscedastic;
      } else if (noise == "homoscedastic") {
        c.synthetic.noise = NoiseModel::Homoscedastic;
      } else {
        config_error("unknown noise model '" + noise + "'");
      }
    }
  }
  if (j.contains("strategies")) {
    std::vector<std::string> names;
    read(j, "strategies", names);
    c.strategies.clear();
    for (const auto& n : names) c.strategies.push_back(parse_strategy(n));
  }
  read(j, "cycles", c.cycles);
  read(j, "budget_per_cycle", c.budget_per_cycle);
  read(j, "initial_labelled", c.initial_labelled);
  read(j, "seeds", c.seeds);
  if (j.contains("model")) c.model = parse_model(j.at("model"));
  read(j, "ensemble_k", c.ensemble_k);
  if (j.contains("variance_source")) {
    std::string v;
    read(j, "variance_source", v);
    if (v == "aleatoric_head") {
      c.variance_source = VarianceSource::AleatoricHead;
    } else if (v == "residual") {
      c.variance_source = VarianceSource::Residual;
    } else {
      config_error("unknown variance_source '" + v + "'");
    }
  }
  if (j.contains("eglpp")) {
    const auto& e = j.at("eglpp");
    check_keys(e, "eglpp", {"perplexity", "k", "tol", "max_iter"});
    read(e, "perplexity", c.eglpp.perplexity);
    read(e, "k", c.eglpp.k);
    read(e, "tol", c.eglpp.tol);
    read(e, "max_iter", c.eglpp.max_iter);
  }
  read(j, "mc_samples", c.mc_samples);
  read(j, "test_fraction", c.test_fraction);
  read(j, "split_seed", c.split_seed);
  return c;
}

SimulationConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const SimulationConfig& c) {
  json j;
  if (c.dataset_path) {
    j["dataset"] = {{"path", *c.dataset_path}};
  } else {
    j["dataset"] = {{"synthetic",
                     {{"n", c.synthetic.n},
                      {"d", c.synthetic.d},
                      {"noise", c.synthetic.noise == NoiseModel::Heteroscedastic ? "heteroscedastic" : "homoscedastic"},
                      {"noise_scale", c.synthetic.noise_scale},
                      {"clusters", c.synthetic.clusters},
                      {"seed", c.synthetic.seed}}}};
  }
  std::vector<std::string> names;
  for (auto s : c.strategies) names.emplace_back(to_string(s));
  j["strategies"] = names;
  j["cycles"] = c.cycles;
  j["budget_per_cycle"] = c.budget_per_cycle;
  j["initial_labelled"] = c.initial_labelled;
  j["seeds"] = c.seeds;
  j["model"] = model_to_json(c.model);
  j["ensemble_k"] = c.ensemble_k;
  j["variance_source"] = c.variance_source == VarianceSource::AleatoricHead ? "aleatoric_head" : "residual";
  j["eglpp"] = {{"perplexity", c.eglpp.perplexity}, {"k", c.eglpp.k}, {"tol", c.eglpp.tol},
                {"max_iter", c.eglpp.max_iter}};
  j["mc_samples"] = c.mc_samples;
  j["test_fraction"] = c.test_fraction;
  j["split_seed"] = c.split_seed;
  return j.dump(2);
}

void validate(const SimulationConfig& c, Index dataset_size) {
  if (c.strategies.empty()) config_error("no strategies");
  std::set<Strategy> unique(c.strategies.begin(), c.strategies.end());
  if (unique.size() != c.strategies.size()) config_error("duplicate strategy");
  if (c.seeds.empty()) config_error("no seeds");
  if (c.cycles < 0) config_error("cycles must be non-negative");
  if (c.budget_per_cycle < 1) config_error("budget_per_cycle must be positive");
  if (c.initial_labelled < 1) config_error("initial_labelled must be positive");
  if (c.ensemble_k < 1) config_error("ensemble_k must be positive");
  if (c.mc_samples < 1) config_error("mc_samples must be positive");
  if (!(c.eglpp.perplexity > 1.0) || c.eglpp.k < 1 || !(c.eglpp.tol > 0) || c.eglpp.max_iter < 1) {
    config_error("invalid eglpp settings");
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) config_error("test_fraction must lie in (0, 1)");
  const Index n_test = static_cast<Index>(std::llround(c.test_fraction * double(dataset_size)));
  const Index pool = dataset_size - n_test;
  if (c.initial_labelled + Index(c.cycles) * c.budget_per_cycle > pool) {
    config_error("initial_labelled + cycles * budget_per_cycle exceeds the " + std::to_string(pool) +
                 "-point pool");
  }
  for (auto s : c.strategies) {
    const bool linear = c.model.kind == ModelKind::Linear;
    if ((s == Strategy::EglCai || s == Strategy::EglMonteCarlo) && !linear) {
      config_error(std::string(to_string(s)) + " requires a linear model");
    }
    if ((s == Strategy::EglClosedForm || s == Strategy::Eglpp) && c.model.kind == ModelKind::Gp) {
      config_error(std::string(to_string(s)) + " requires a linear or mlp model");
    }
  }
  if (c.model.kind == ModelKind::Linear && c.initial_labelled < 2) config_error("initial pool too small to fit");
}

Data load_dataset(const SimulationConfig& config) {
  if (config.dataset_path) return read_dataset_csv(*config.dataset_path);
  return generate_synthetic(config.synthetic);
}

}  // namespace egl::harness
