#include "egl/egl.hpp"
#include "egl/eglpp.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace egl;
using Mat = Matrix<double>;
using Vec = Vector<double>;

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

Model<double> linear(const Vec& w, double b, double var) { return LinearModel<double>{w, b, var}; }

Ensemble<double> random_linear_ensemble(std::mt19937_64& rng, Index d, Index k) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 1.5);
  auto draw = [&] {
    Vec w(d);
    for (auto& v : w) v = g(rng);
    return linear(w, g(rng), u(rng));
  };
  std::vector<Model<double>> members;
  for (Index i = 0; i < k; ++i) members.push_back(draw());
  return make_ensemble(std::move(members), draw());
}

Vec random_x(std::mt19937_64& rng, Index d) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec x(d);
  for (auto& v : x) v = g(rng);
  return x;
}

}  // namespace

TEST_CASE("score_cai: examples") {
  const Vec w = Vec::Ones(2);
  auto same = make_ensemble<double>({linear(w, 0.5, 1), linear(w, 0.5, 2)}, linear(w, 0.5, 1));
  CHECK(score_cai(same, Vec::Constant(2, 3.0)) == 0.0);

  auto one = make_ensemble<double>({linear(Vec::Zero(2), 0.0, 1)}, linear(Vec::Zero(2), 1.0, 1));
  CHECK(score_cai(one, Vec::Ones(2), BiasCoordinate::Omit) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(score_cai(one, Vec::Ones(2)) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
}

TEST_CASE("score_cai: matches a naive loop") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const Index d = 1 + t % 5, k = 1 + t % 7;
    const auto e = random_linear_ensemble(rng, d, k);
    const Vec x = random_x(rng, d);
    const auto& full = std::get<LinearModel<double>>(e.full_model);
    const double fz = full.weights.dot(x) + full.bias;
    double total = 0;
    for (const auto& m : e.members) {
      const auto& lm = std::get<LinearModel<double>>(m);
      Vec xb(d + 1);
      xb << x, 1.0;
      total += ((fz - (lm.weights.dot(x) + lm.bias)) * xb).norm();
    }
    CHECK(score_cai(e, x) == doctest::Approx(total / double(k)).epsilon(1e-13));
  }
}

TEST_CASE("score_closed_form_linear: examples") {
  auto e1 = make_ensemble<double>({linear(Vec::Zero(1), 3.0, 1.0)}, linear(Vec::Zero(1), 3.0, 1.0));
  const auto s1 = score_closed_form_linear(e1, Vec::Constant(1, 2.0), 9);
  CHECK(s1.score == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(s1.candidate_id == 9);
  CHECK(s1.gradient_factor == 5.0);
  CHECK(s1.mean_sigma_sq == 1.0);
  CHECK(s1.mean_disagreement_sq == 0.0);

  auto e2 = make_ensemble<double>({linear(Vec::Zero(1), 0.5, 0.0), linear(Vec::Zero(1), 1.5, 0.0)},
                                  linear(Vec::Zero(1), 1.0, 0.0));
  const auto s2 = score_closed_form_linear(e2, Vec::Constant(1, 1.0), 0, BiasCoordinate::Omit);
  CHECK(s2.score == doctest::Approx(0.25).epsilon(1e-15));

  auto gp = make_ensemble<double>({Model<double>(gp_fit<double>(Mat::Zero(1, 1), Vec::Zero(1), 1.0, 1.0, 0.1))},
                                  linear(Vec::Zero(1), 0.0, 1.0));
  CHECK(error_of([&] { score_closed_form_linear(gp, Vec::Zero(1)); }) == ErrorCode::NonLinearMember);
  CHECK(error_of([&] { score_cai(gp, Vec::Zero(1)); }) == ErrorCode::NonLinearMember);
  CHECK(error_of([&] { score_monte_carlo(gp, Vec::Zero(1), 10, 0); }) == ErrorCode::NonLinearMember);
}

TEST_CASE("score_closed_form_linear: component invariant and variance floor bound") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const Index d = 1 + t % 5;
    const auto e = random_linear_ensemble(rng, d, 1 + t % 10);
    const Vec x = random_x(rng, d);
    const auto s = score_closed_form_linear(e, x);
    CHECK(s.score == doctest::Approx(s.gradient_factor * (s.mean_sigma_sq + s.mean_disagreement_sq)).epsilon(1e-12));
    double min_var = 1e300;
    for (const auto& m : e.members) min_var = std::min(min_var, std::get<LinearModel<double>>(m).noise_variance);
    CHECK(s.score >= (x.squaredNorm() + 1.0) * min_var * (1 - 1e-12));
  }
}

TEST_CASE("score_closed_form_linear agrees with the Monte-Carlo form") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 10; ++t) {
    const Index d = 1 + t % 5;
    const auto e = random_linear_ensemble(rng, d, 1 + t % 10);
    const Vec x = random_x(rng, d);
    const double closed = score_closed_form_linear(e, x).score;
    const double mc = score_monte_carlo(e, x, 200000, 77, t);
    CHECK(mc == doctest::Approx(closed).epsilon(0.02));
  }
}

TEST_CASE("score_monte_carlo: zero variance is exact and repeated runs bracket the closed form") {
  auto e = make_ensemble<double>({linear(Vec::Constant(2, 1.0), 0.0, 0.0), linear(Vec::Constant(2, -1.0), 1.0, 0.0)},
                                 linear(Vec::Constant(2, 0.5), 0.0, 0.0));
  const Vec x = (Vec(2) << 0.3, -0.8).finished();
  double expect = 0;
  const double fz = 0.5 * x.sum();
  for (double mu : {x.sum(), -x.sum() + 1.0}) expect += (fz - mu) * (fz - mu) * (x.squaredNorm() + 1.0);
  CHECK(score_monte_carlo(e, x, 3, 1) == doctest::Approx(expect / 2).epsilon(1e-14));

  std::mt19937_64 rng(21);
  const auto r = random_linear_ensemble(rng, 3, 4);
  const Vec q = random_x(rng, 3);
  const double closed = score_closed_form_linear(r, q).score;
  std::vector<double> runs;
  for (std::uint64_t s = 0; s < 30; ++s) runs.push_back(score_monte_carlo(r, q, 2000, s, 5));
  const double mean = std::accumulate(runs.begin(), runs.end(), 0.0) / double(runs.size());
  double var = 0;
  for (double v : runs) var += (v - mean) * (v - mean);
  const double se = std::sqrt(var / double(runs.size() - 1) / double(runs.size()));
  CHECK(std::abs(mean - closed) < 3 * se);

  // Deterministic per (seed, id) and independent of call order.
  CHECK(score_monte_carlo(r, q, 500, 9, 4) == score_monte_carlo(r, q, 500, 9, 4));
  CHECK(score_monte_carlo(r, q, 500, 9, 4) != score_monte_carlo(r, q, 500, 9, 5));
  CHECK(error_of([&] { score_monte_carlo(r, q, 0, 9, 4); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("mode-sampled Monte-Carlo ranks like score_cai for K = 1") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec w1 = random_x(rng, 2), wz = random_x(rng, 2);
    auto e = make_ensemble<double>({linear(w1, g(rng), 0.0)}, linear(wz, g(rng), 0.0));
    std::vector<double> cai, mc;
    for (int c = 0; c < 40; ++c) {
      const Vec x = random_x(rng, 2);
      cai.push_back(score_cai(e, x));
      mc.push_back(score_monte_carlo(e, x, 1, 0, c));
    }
    CHECK(oracle::kendall_tau(cai, mc) == 1.0);
  }
}

TEST_CASE("score_closed_form_nonlinear") {
  std::mt19937_64 rng(31);
  const auto e = random_linear_ensemble(rng, 3, 4);
  const Vec x = random_x(rng, 3);
  CHECK(score_closed_form_nonlinear(e, x, 0.0).score == 0.0);
  CHECK(error_of([&] { score_closed_form_nonlinear(e, x, -1.0); }) == ErrorCode::NegativeGradNorm);

  // A single-layer network as f_z: its parameter gradient is (x, 1).
  const auto& full = std::get<LinearModel<double>>(e.full_model);
  MlpModel<double> net;
  net.layers.push_back({full.weights.transpose(), Vec::Constant(1, full.bias)});
  const double g = gradient_cache(net, x).output_grad_norm_sq();
  CHECK(g == doctest::Approx(x.squaredNorm() + 1.0).epsilon(1e-15));
  CHECK(score_closed_form_nonlinear(e, x, g).score ==
        doctest::Approx(score_closed_form_linear(e, x).score).epsilon(1e-14));

  const double v = 0.4, mu = 1.2, fz = 0.7, gn = 2.5;
  for (int k : {1, 3, 8}) {
    std::vector<Model<double>> same(static_cast<std::size_t>(k), linear(Vec::Zero(1), mu, v));
    auto ek = make_ensemble<double>(same, linear(Vec::Zero(1), fz, v));
    CHECK(score_closed_form_nonlinear(ek, Vec::Zero(1), gn).score ==
          doctest::Approx(gn * v + gn * (mu - fz) * (mu - fz)).epsilon(1e-14));
  }
}

TEST_CASE("uniform feature scaling scales the scores and keeps the argmax") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat x(40, 2);
  Vec y(40);
  for (Index i = 0; i < 40; ++i) {
    x(i, 0) = g(rng);
    x(i, 1) = g(rng);
    y(i) = x(i, 0) - 2 * x(i, 1) + 0.5 * g(rng);
  }
  const double c = 3.0;
  ModelSpec spec;
  const auto e = bootstrap_ensemble(Dataset<double>(x, y), 5, spec, 1);
  const auto es = bootstrap_ensemble(Dataset<double>(Mat(c * x), y), 5, spec, 1);
  std::vector<double> a, as, b, bs;
  for (int t = 0; t < 30; ++t) {
    const Vec q = random_x(rng, 2);
    const Vec qs = c * q;
    const double cf = score_closed_form_linear(e, q, 0, BiasCoordinate::Omit).score;
    const double cfs = score_closed_form_linear(es, qs, 0, BiasCoordinate::Omit).score;
    CHECK(cfs == doctest::Approx(c * c * cf).epsilon(1e-9));
    const double ca = score_cai(e, q, BiasCoordinate::Omit);
    const double cas = score_cai(es, qs, BiasCoordinate::Omit);
    CHECK(cas == doctest::Approx(c * ca).epsilon(1e-9));
    a.push_back(cf), as.push_back(cfs), b.push_back(ca), bs.push_back(cas);
  }
  CHECK(std::max_element(a.begin(), a.end()) - a.begin() == std::max_element(as.begin(), as.end()) - as.begin());
  CHECK(std::max_element(b.begin(), b.end()) - b.begin() == std::max_element(bs.begin(), bs.end()) - bs.begin());
}

TEST_CASE("Gaussian integral identity behind the closed form") {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> mu(-4, 4), sd(0.05, 3);
  for (int t = 0; t < 50; ++t) {
    const double m = mu(rng), s = sd(rng), f = mu(rng);
    CHECK(std::abs(oracle::gaussian_expected_sq(m, s, f) - (s * s + (m - f) * (m - f))) < 1e-8);
  }
}

TEST_CASE("closed form ranks like predictive variance when f_z is the ensemble mean") {
  std::mt19937_64 rng(61);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int pool = 0; pool < 5; ++pool) {
    const Index d = 3, k = 5;
    std::vector<LinearModel<double>> ms;
    for (Index i = 0; i < k; ++i) ms.push_back({random_x(rng, d), g(rng), u(rng)});
    LinearModel<double> mean_model{Vec::Zero(d), 0.0, 1.0};
    for (const auto& m : ms) mean_model.weights += m.weights / double(k), mean_model.bias += m.bias / double(k);
    std::vector<Model<double>> members(ms.begin(), ms.end());
    const auto e = make_ensemble<double>(members, mean_model);
    std::vector<double> egl_scores, pv;
    for (int c = 0; c < 100; ++c) {
      const Vec x = 2 * random_x(rng, d);
      egl_scores.push_back(score_closed_form_nonlinear(e, x, 1.7).score);
      pv.push_back(predictive_variance(e, x));
    }
    CHECK(oracle::kendall_tau(egl_scores, pv) == 1.0);
  }
}

TEST_CASE("select_batch") {
  const std::vector<Id> ids{10, 11, 12, 13};
  const std::vector<double> s{0.5, 2.0, 2.0, -1.0};
  auto all = select_batch(std::span<const double>(s), std::span<const Id>(ids), 4);
  std::sort(all.begin(), all.end());
  CHECK(all == ids);
  CHECK(select_batch(std::span<const double>(s), std::span<const Id>(ids), 1) == std::vector<Id>{11});
  CHECK(select_batch(std::span<const double>(s), std::span<const Id>(ids), 3) == std::vector<Id>{11, 12, 10});
  CHECK(error_of([&] { select_batch(std::span<const double>(s), std::span<const Id>(ids), 5); }) ==
        ErrorCode::BudgetExceedsPool);

  const std::vector<EglScore<double>> tied{{0, 1.0, 1, 1, 0}, {1, 1.0, 1, 1, 0}};
  CHECK(select_batch(std::span<const EglScore<double>>(tied), 1) == std::vector<Id>{0});

  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(60);
    std::vector<Id> id(60);
    for (std::size_t i = 0; i < 60; ++i) v[i] = u(rng), id[i] = Id(1000 - 7 * i);
    std::vector<std::size_t> order(60);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] > v[b]; });
    std::vector<Id> expect;
    for (std::size_t i = 0; i < 17; ++i) expect.push_back(id[order[i]]);
    CHECK(select_batch(std::span<const double>(v), std::span<const Id>(id), 17) == expect);
  }
}
