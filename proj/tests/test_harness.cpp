#include "egl/harness.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace egl;
using namespace egl::harness;

namespace {

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an egl::Error");
  return ErrorCode::DataInvalid;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = double(i);
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = double(a.size());
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

SimulationConfig small_config() {
  SimulationConfig c;
  c.synthetic.n = 250;
  c.model = ModelSpec{};
  c.model.kind = ModelKind::Linear;
  c.cycles = 3;
  c.budget_per_cycle = 20;
  c.initial_labelled = 20;
  c.seeds = {0, 1};
  c.ensemble_k = 4;
  c.variance_source = VarianceSource::Residual;
  c.strategies = {Strategy::Random, Strategy::PredictiveVariance, Strategy::EglClosedForm, Strategy::Eglpp};
  return c;
}

std::set<Id> id_set(const Data& d) { return {d.ids().begin(), d.ids().end()}; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(EGL_LAB_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string write_temp(const std::string& name, const std::string& text) {
  const std::string path = std::string(EGL_TEST_TMP) + "/" + name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST_CASE("synthetic data is reproducible per seed") {
  SyntheticSpec spec;
  spec.n = 300;
  spec.d = 3;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.size() == 300);
  CHECK(a.dim() == 3);
  CHECK(a.features() == b.features());
  CHECK(a.targets() == b.targets());
  spec.seed = 1;
  CHECK(generate_synthetic(spec).features() != a.features());
}

TEST_CASE("synthetic noise follows the declared model") {
  SyntheticSpec spec;
  spec.n = 1000;
  const auto het = generate_synthetic(spec);
  std::vector<double> abs_residual, sd;
  for (Index i = 0; i < het.size(); ++i) {
    const VectorXd x = het.x(i);
    abs_residual.push_back(std::abs(het.y(i) - synthetic_mean(x)));
    sd.push_back(synthetic_noise_sd(spec, x));
  }
  CHECK(spearman(abs_residual, sd) > 0.5);

  spec.noise_scale = 0.0;
  const auto clean = generate_synthetic(spec);
  for (Index i = 0; i < clean.size(); ++i) CHECK(clean.y(i) == synthetic_mean(VectorXd(clean.x(i))));

  spec.noise_scale = 1.0;
  spec.noise = NoiseModel::Homoscedastic;
  const VectorXd p = VectorXd::Zero(2), q = VectorXd::Constant(2, 3.0);
  CHECK(synthetic_noise_sd(spec, p) == synthetic_noise_sd(spec, q));
}

TEST_CASE("smallest synthetic set still fits a line") {
  SyntheticSpec spec;
  spec.n = 4;
  spec.d = 1;
  spec.noise = NoiseModel::Homoscedastic;
  const auto data = generate_synthetic(spec);
  const auto m = fit_ols(data);
  CHECK(m.weights.allFinite());
}

TEST_CASE("initial pool, annotate and holdout split") {
  const auto data = generate_synthetic({100, 2});
  const auto [pool, test] = split_holdout(data, 0.2, 3);
  CHECK(test.size() == 20);
  CHECK(pool.size() == 80);
  std::set<Id> all = id_set(pool);
  for (Id id : test.ids()) CHECK(all.insert(id).second);
  CHECK(all.size() == 100);

  const auto s = make_initial_pool(pool, 10, 5);
  CHECK(s.labelled.size() == 10);
  CHECK(s.unlabelled.size() == 70);
  CHECK(make_initial_pool(pool, 10, 5).labelled.ids() == s.labelled.ids());
  const std::vector<Id> pick{s.unlabelled.id(3), s.unlabelled.id(0)};
  const auto next = annotate(s, pick);
  CHECK(next.cycle == 1);
  CHECK(next.labelled.size() == 12);
  CHECK(next.history.size() == 1);
  CHECK(next.history[0].second == pick);
  CHECK(error_of([&] { annotate(next, pick); }) == ErrorCode::DataInvalid);
  CHECK(error_of([&] { make_initial_pool(pool, 81, 0); }) == ErrorCode::BudgetExceedsPool);
}

TEST_CASE("run_cycle: exhausting the pool and determinism") {
  auto c = small_config();
  const auto data = generate_synthetic({60, 2});
  const auto s = make_initial_pool(data, 10, 0);
  c.budget_per_cycle = s.unlabelled.size();
  for (Strategy st : c.strategies) {
    const auto done = run_cycle(s, st, c, 0);
    CHECK(done.unlabelled.size() == 0);
    CHECK(id_set(done.labelled) == id_set(data));
  }
  c.budget_per_cycle = 7;
  const auto a = run_cycle(s, Strategy::Random, c, 4);
  const auto b = run_cycle(s, Strategy::Random, c, 4);
  CHECK(a.history == b.history);
  CHECK(run_cycle(s, Strategy::Random, c, 5).history != a.history);
  c.budget_per_cycle = 51;
  CHECK(error_of([&] { run_cycle(s, Strategy::Random, c, 0); }) == ErrorCode::BudgetExceedsPool);
}

TEST_CASE("run_cycle: eglpp selections never repeat across cycles") {
  auto c = small_config();
  c.model = SimulationConfig::default_model();
  c.model.train.epochs = 30;
  c.budget_per_cycle = 15;
  const auto data = generate_synthetic({200, 2});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = make_initial_pool(data, 20, seed);
    std::set<Id> seen = id_set(s.labelled);
    for (int cycle = 0; cycle < 3; ++cycle) {
      s = run_cycle(s, Strategy::Eglpp, c, seed);
      for (Id id : s.history.back().second) CHECK(seen.insert(id).second);
    }
    CHECK(s.labelled.size() == 65);
    CHECK(id_set(s.labelled) == seen);
  }
}

TEST_CASE("run_simulation: records, shared baseline and label conservation") {
  auto c = small_config();
  const auto data = generate_synthetic(c.synthetic);
  c.cycles = 0;
  const auto base = run_simulation(c, data);
  CHECK(base.size() == c.strategies.size() * c.seeds.size());
  for (const auto& r : base) CHECK(r.cycle == 0);

  c.cycles = 3;
  const auto recs = run_simulation(c, data);
  CHECK(recs.size() == c.strategies.size() * c.seeds.size() * 4);
  for (const auto& r : recs) {
    CHECK(r.labelled_count == c.initial_labelled + r.cycle * c.budget_per_cycle);
    CHECK(std::isfinite(r.rmse));
    if (r.cycle == 0) {
      const auto same = std::find_if(base.begin(), base.end(), [&](const CurveRecord& b) { return b.seed == r.seed; });
      CHECK(r.rmse == same->rmse);
    }
  }
  const auto again = run_simulation(c, data);
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(again[i].rmse == recs[i].rmse);

  std::ostringstream csv;
  write_curves_csv(csv, recs);
  CHECK(csv.str().rfind("strategy,seed,cycle,labelled_count,rmse\n", 0) == 0);
  const auto summary = summarize_json(recs);
  CHECK(summary.find("eglpp") != std::string::npos);
}

TEST_CASE("rmse") {
  Model<double> zero = LinearModel<double>{VectorXd::Zero(1), 0.0, 1.0};
  const Data two(Matrix<double>::Zero(2, 1), (VectorXd(2) << 3.0, 4.0).finished());
  CHECK(rmse(zero, two) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));

  const auto data = generate_synthetic({50, 2});
  const LinearModel<double> lin{(VectorXd(2) << 0.3, -1.2).finished(), 0.4, 1.0};
  double ss = 0;
  for (Index i = 0; i < data.size(); ++i) {
    const double f = 0.3 * data.x(i)(0) - 1.2 * data.x(i)(1) + 0.4;
    ss += (f - data.y(i)) * (f - data.y(i));
  }
  CHECK(rmse(Model<double>(lin), data) == doctest::Approx(std::sqrt(ss / 50)).epsilon(1e-13));
  CHECK(error_of([&] { rmse(zero, Data(Matrix<double>(0, 1), VectorXd(0))); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("paired_t_test") {
  const std::vector<double> same{1.0, 2.0, 3.0};
  const auto d = paired_t_test(same, same);
  CHECK(d.degenerate);
  CHECK(d.p_one_tailed == 0.5);

  const std::vector<double> a{2, 4, 6, 8, 10}, b{1, 2, 3, 4, 5};
  const auto r = paired_t_test(a, b);
  CHECK(r.df == 4);
  CHECK(r.t == doctest::Approx(3.0 / std::sqrt(2.5 / 5.0)).epsilon(1e-14));
  CHECK(r.p_one_tailed == doctest::Approx(oracle::student_t_upper_tail(r.t, 4.0)).epsilon(1e-8));
  CHECK(std::abs(r.p_one_tailed - 0.0066) < 1e-4);
  const auto swapped = paired_t_test(b, a);
  CHECK(swapped.p_one_tailed == doctest::Approx(1.0 - r.p_one_tailed).epsilon(1e-12));

  for (double nu : {1.0, 2.0, 3.0, 7.0, 30.0})
    for (double t : {-2.5, 0.0, 0.4, 1.3, 6.0})
      CHECK(std::abs(student_t_upper_tail(t, nu) - oracle::student_t_upper_tail(t, nu)) < 1e-9);

  CHECK(error_of([&] { paired_t_test(a, same); }) == ErrorCode::LengthMismatch);
  const std::vector<double> one{1.0};
  CHECK(error_of([&] { paired_t_test(one, one); }) == ErrorCode::TooFewPairs);
}

TEST_CASE("config parsing and validation") {
  const auto def = parse_config("{}");
  CHECK(config_to_json(def) == config_to_json(SimulationConfig{}));
  CHECK(config_to_json(parse_config(config_to_json(small_config()))) == config_to_json(small_config()));

  const auto c = parse_config(R"({"strategies":["random","egl_cai"],"cycles":2,
    "model":{"kind":"linear"},"dataset":{"synthetic":{"n":300,"noise":"homoscedastic"}}})");
  CHECK(c.strategies == std::vector<Strategy>{Strategy::Random, Strategy::EglCai});
  CHECK(c.cycles == 2);
  CHECK(c.synthetic.n == 300);
  CHECK(c.synthetic.noise == NoiseModel::Homoscedastic);

  for (const char* bad : {R"({"cycle":2})", R"({"cycles":"two"})", R"({"strategies":["best"]})", "{",
                          R"({"eglpp":{"perplexity":5,"extra":1}})",
                          R"({"dataset":{"path":"a.csv","synthetic":{}}})"}) {
    CHECK(error_of([&] { parse_config(bad); }) == ErrorCode::ConfigInvalid);
  }

  auto v = small_config();
  CHECK_NOTHROW(validate(v, 250));
  CHECK(error_of([&] { validate(v, 90); }) == ErrorCode::ConfigInvalid);
  v.model = SimulationConfig::default_model();
  v.strategies = {Strategy::EglCai};
  CHECK(error_of([&] { validate(v, 250); }) == ErrorCode::ConfigInvalid);
  v.strategies = {Strategy::Random, Strategy::Random};
  CHECK(error_of([&] { validate(v, 250); }) == ErrorCode::ConfigInvalid);
  v.strategies = {Strategy::Eglpp};
  v.model.kind = ModelKind::Gp;
  CHECK(error_of([&] { validate(v, 250); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("dataset CSV round trip and malformed input") {
  const auto data = generate_synthetic({40, 3});
  std::stringstream ss;
  write_dataset_csv(ss, data);
  const auto back = read_dataset_csv(ss);
  CHECK(back.ids() == data.ids());
  CHECK(back.features() == data.features());
  CHECK(back.targets() == data.targets());

  for (const char* bad : {"", "id,x0,y\n1,2,3\n", "id,f0,y\n1,2\n", "id,f0,y\n1,abc,3\n", "id,f0,y\n",
                          "id,f0,y\n1,2,3\n1,4,5\n"}) {
    std::istringstream in(bad);
    CHECK(error_of([&] { read_dataset_csv(in); }) == ErrorCode::DataInvalid);
  }
}

TEST_CASE("egl-lab exit codes") {
  const auto data = generate_synthetic({80, 2});
  const std::string data_path = std::string(EGL_TEST_TMP) + "/cli_data.csv";
  {
    std::ofstream out(data_path);
    write_dataset_csv(out, data);
  }
  std::string ids;
  for (Index i = 0; i < 10; ++i) ids += std::to_string(data.id(i)) + "\n";
  const auto ids_path = write_temp("cli_ids.csv", "id\n" + ids);
  const auto linear = write_temp("cli_linear.json", R"({"model":{"kind":"linear"},"ensemble_k":3,
    "variance_source":"residual"})");
  const auto bad_config = write_temp("cli_bad.json", R"({"cycles":-1, "unknown":true})");

  CHECK(run_cli("score --strategy egl_cai --data " + data_path + " --labelled-ids " + ids_path + " --config " +
                linear) == 0);
  CHECK(run_cli("score --strategy egl_cai --data /nonexistent.csv --labelled-ids " + ids_path + " --config " +
                linear) == 3);
  CHECK(run_cli("score --strategy no_such --data " + data_path + " --labelled-ids " + ids_path) == 2);
  CHECK(run_cli("simulate --config " + bad_config) == 2);
  CHECK(run_cli("simulate --bogus-flag") == 2);
  const auto a = write_temp("cli_a.csv", "a\n1\n2\n3\n");
  const auto b = write_temp("cli_b.csv", "b\n0\n1\n1\n");
  CHECK(run_cli("ttest --a " + a + " --b " + b) == 0);
}
