#include "egl/harness.hpp"

#include <functional>
#include <limits>

namespace egl::harness {

namespace {

constexpr double kQuadratureTolerance = 1e-9;

double simpson(double a, double fa, double b, double fb, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double fa, double b, double fb, double m,
                        double fm, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = simpson(a, fa, m, fm, flm);
  const double right = simpson(m, fm, b, fb, frm);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
  const double fa = f(a);
  const double fb = f(b);
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  return adaptive_simpson(f, a, fa, b, fb, m, fm, simpson(a, fa, b, fb, fm), tol, 50);
}

}  // namespace

double student_t_upper_tail(double t, double df) {
  if (!(df > 0.0)) fail(ErrorCode::ConfigInvalid, "student_t_upper_tail: df must be positive");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (t == std::numeric_limits<double>::infinity()) return 0.0;
  if (t == -std::numeric_limits<double>::infinity()) return 1.0;
  // With t = sqrt(df) tan(theta) the density becomes cos(theta)^(df-1) on a
  // finite interval, normalised by B(1/2, df/2).
  const double log_norm = std::lgamma(0.5) + std::lgamma(0.5 * df) - std::lgamma(0.5 * (df + 1.0));
  const double norm = std::exp(log_norm);
  auto density = [df](double theta) { return std::pow(std::cos(theta), df - 1.0); };
  const double theta = std::atan(std::abs(t) / std::sqrt(df));
  const double central = integrate(density, 0.0, theta, kQuadratureTolerance * norm) / norm;
  const double upper = std::clamp(0.5 - central, 0.0, 0.5);
  return t >= 0.0 ? upper : 1.0 - upper;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "paired_t_test: samples differ in length");
  if (a.size() < 2) fail(ErrorCode::TooFewPairs, "paired_t_test: need at least two pairs");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= double(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dev = (a[i] - b[i]) - mean;
    ss += dev * dev;
  }
  const double sd = std::sqrt(ss / double(n - 1));

  TTestResult r;
  r.df = static_cast<Index>(n - 1);
  if (sd == 0.0) {
    r.degenerate = true;
    if (mean == 0.0) {
      r.t = 0.0;
      r.p_one_tailed = 0.5;
    } else {
      r.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_one_tailed = mean > 0.0 ? 0.0 : 1.0;
    }
    return r;
  }
  r.t = mean / (sd / std::sqrt(double(n)));
  r.p_one_tailed = student_t_upper_tail(r.t, double(r.df));
  return r;
}

double rmse(const Model<double>& model, const Data& test) {
  if (test.empty()) fail(ErrorCode::EmptyDataset, "rmse: empty test set");
  double ss = 0.0;
  for (Index i = 0; i < test.size(); ++i) {
    const double r = predict(model, test.x(i)).mean - test.y(i);
    ss += r * r;
  }
  return std::sqrt(ss / double(test.size()));
}

}  // namespace egl::harness
