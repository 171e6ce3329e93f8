// Independent reference computations shared by the unit and acceptance tests.
#ifndef EGL_TESTS_ORACLES_HPP
#define EGL_TESTS_ORACLES_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

namespace detail {

inline double simpson_step(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                           double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// Adaptive Simpson quadrature of f over [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12,
                        int max_depth = 50) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

/// E[(Y - fz)^2] for Y ~ N(mu, sigma^2) by quadrature in the standardised variable.
inline double gaussian_expected_sq(double mu, double sigma, double fz) {
  const double pi = std::acos(-1.0);
  auto integrand = [&](double z) {
    const double r = mu + sigma * z - fz;
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * pi) * r * r;
  };
  // Split at 0 so the peak is a node.
  return integrate(integrand, -14.0, 0.0, 1e-13) + integrate(integrand, 0.0, 14.0, 1e-13);
}

/// Kendall's tau-a over all pairs.
inline double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (a[i] - a[j]) * (b[i] - b[j]);
      if (s > 0) ++concordant;
      if (s < 0) ++discordant;
    }
  }
  return double(concordant - discordant) / (0.5 * double(n) * double(n - 1));
}

/// Student t density with nu degrees of freedom.
inline double student_t_density(double t, double nu) {
  const double pi = std::acos(-1.0);
  const double c = std::exp(std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu)) / std::sqrt(nu * pi);
  return c * std::pow(1.0 + t * t / nu, -0.5 * (nu + 1));
}

/// P(T > t) from symmetry: one half minus the density integrated between 0 and t.
inline double student_t_upper_tail(double t, double nu) {
  const double central = integrate([&](double s) { return student_t_density(s, nu); }, 0.0, std::abs(t), 1e-14);
  return t >= 0 ? 0.5 - central : 0.5 + central;
}

}  // namespace oracle

#endif  // EGL_TESTS_ORACLES_HPP
