#include "qf/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace qf {

LbfgsResult lbfgs_minimize(const Objective& objective, Eigen::VectorXd x0, const LbfgsOptions& options) {
  LbfgsResult res;
  res.x = std::move(x0);
  const Eigen::Index n = res.x.size();
  Eigen::VectorXd g(n), g_new(n), x_new(n), dir(n);
  double f = objective(res.x, g);
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> alpha(static_cast<std::size_t>(options.history));

  auto converged_at = [&](double value, const Eigen::VectorXd& grad) {
    return grad.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance * std::max(1.0, std::abs(value));
  };
  if (converged_at(f, g)) {
    res.value = f;
    res.converged = true;
    return res;
  }

  for (int it = 0; it < options.max_iterations; ++it) {
    // Two-loop recursion.
    dir = -g;
    const std::size_t m = s_hist.size();
    for (std::size_t k = m; k-- > 0;) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(dir);
      dir -= alpha[k] * y_hist[k];
    }
    if (m > 0) {
      dir *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    } else {
      dir /= std::max(1.0, g.norm());
    }
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(dir);
      dir += (alpha[k] - beta) * s_hist[k];
    }
    double slope = g.dot(dir);
    if (!(slope < 0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g / std::max(1.0, g.norm());
      slope = g.dot(dir);
    }

    double step = 1.0;
    double f_new = 0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = objective(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    res.iterations = it + 1;
    if (!accepted) break;

    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    const double rel_decrease = (f - f_new) / std::max({1.0, std::abs(f), std::abs(f_new)});
    res.x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    if (sy > 1e-12 * y.squaredNorm()) {
      if (static_cast<int>(s_hist.size()) == options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
    if (converged_at(f, g) || rel_decrease <= options.function_tolerance) {
      res.converged = true;
      break;
    }
  }
  res.value = f;
  return res;
}

}  // namespace qf
