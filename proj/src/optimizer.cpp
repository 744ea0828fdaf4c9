#include "magcal/optimizer.hpp"

#include "magcal/errors.hpp"
#include "magcal/parallel.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <string>

namespace magcal {

void OptimizerConfig::validate() const {
  if (max_iterations <= 0 || !(grad_step_relative > 0.0) || !(armijo_c1 > 0.0) || max_backtracks <= 0 ||
      !(relative_cost_tolerance > 0.0) || !(gradient_tolerance > 0.0))
    throw DataError("optimizer settings must be positive");
  if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
    throw DataError("optimizer backtrack factor must lie in (0, 1)");
}

std::string_view to_string(OptStatus status) {
  switch (status) {
    case OptStatus::Converged: return "converged";
    case OptStatus::MaxIterations: return "max_iterations";
    case OptStatus::Stalled: return "stalled";
  }
  return "unknown";
}

bool OptTrace::monotone() const {
  double prev = initial_cost;
  for (const auto& it : iterations) {
    if (it.cost > prev) return false;
    prev = it.cost;
  }
  return true;
}

Eigen::VectorXd numerical_gradient(const CostFunction& f, const Eigen::VectorXd& x, double rel_step,
                                   unsigned threads, int* evaluations) {
  const auto n = static_cast<std::size_t>(x.size());
  Eigen::VectorXd g(x.size());
  std::vector<int> evals(n, 0);
  parallel_for(n, threads, [&](std::size_t idx) {
    const auto i = static_cast<Eigen::Index>(idx);
    double h = rel_step * (1.0 + std::abs(x(i)));
    for (int attempt = 0; attempt < 2; ++attempt, h /= 10.0) {
      Eigen::VectorXd xp = x;
      Eigen::VectorXd xm = x;
      xp(i) += h;
      xm(i) -= h;
      const double fp = f(xp);
      const double fm = f(xm);
      evals[idx] += 2;
      if (std::isfinite(fp) && std::isfinite(fm)) {
        g(i) = (fp - fm) / (xp(i) - xm(i));
        return;
      }
    }
    throw NumericalError("non-finite cost while differentiating parameter component " + std::to_string(idx));
  });
  if (evaluations) {
    for (int e : evals) *evaluations += e;
  }
  return g;
}

BfgsUpdate bfgs_update_damped(const Eigen::MatrixXd& B, const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
  BfgsUpdate out{B, false, false};
  const Eigen::VectorXd Bs = B * s;
  const double sBs = s.dot(Bs);
  if (!(sBs > 0.0) || !std::isfinite(sBs)) {
    out.skipped = true;
    return out;
  }
  const double sy = s.dot(y);
  double phi = 1.0;
  if (sy < 0.2 * sBs) {
    phi = 0.8 * sBs / (sBs - sy);
    out.damped = true;
  }
  const Eigen::VectorXd r = phi * y + (1.0 - phi) * Bs;
  const double sr = s.dot(r);
  if (!(sr > 0.0) || !r.allFinite()) {
    out.skipped = true;
    return out;
  }
  out.B = B - (Bs * Bs.transpose()) / sBs + (r * r.transpose()) / sr;
  out.B = 0.5 * (out.B + out.B.transpose()).eval();
  return out;
}

double backtracking_line_search(const CostFunction& f, const Eigen::VectorXd& x, double fx,
                                const Eigen::VectorXd& direction, const Eigen::VectorXd& gradient,
                                const OptimizerConfig& cfg, int* evaluations, double* f_new) {
  const double slope = gradient.dot(direction);
  double alpha = 1.0;
  for (int k = 0; k <= cfg.max_backtracks; ++k, alpha *= cfg.backtrack_factor) {
    const double ft = f(x + alpha * direction);
    if (evaluations) ++*evaluations;
    if (std::isfinite(ft) && ft <= fx + cfg.armijo_c1 * alpha * slope) {
      if (f_new) *f_new = ft;
      return alpha;
    }
  }
  if (f_new) *f_new = fx;
  return 0.0;
}

MinimizeResult minimize(const CostFunction& f, const Eigen::VectorXd& x0, const OptimizerConfig& cfg) {
  cfg.validate();
  const auto n = x0.size();
  MinimizeResult res;
  res.x = x0;
  OptTrace& trace = res.trace;

  double fx = f(x0);
  trace.cost_evaluations = 1;
  if (!std::isfinite(fx)) throw NumericalError("cost is not finite at the initial point");
  trace.initial_cost = fx;

  const double scale = std::max(1.0, std::abs(fx));
  const Eigen::MatrixXd B0 = scale * Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd B = B0;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd g = numerical_gradient(f, x, cfg.grad_step_relative, cfg.threads, &trace.cost_evaluations);

  int stalls = 0;
  trace.status = OptStatus::MaxIterations;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < cfg.gradient_tolerance) {
      trace.status = OptStatus::Converged;
      break;
    }

    Eigen::VectorXd p;
    Eigen::LLT<Eigen::MatrixXd> llt(B);
    if (llt.info() == Eigen::Success) p = -llt.solve(g);
    if (p.size() != n || !p.allFinite() || g.dot(p) >= 0.0) {
      B = B0;
      p = -g / scale;
    }

    double f_new = fx;
    const double alpha = backtracking_line_search(f, x, fx, p, g, cfg, &trace.cost_evaluations, &f_new);
    if (alpha == 0.0) {
      if (++stalls >= 2) {
        trace.status = OptStatus::Stalled;
        break;
      }
      B = B0;
      continue;
    }
    stalls = 0;

    const Eigen::VectorXd x_new = x + alpha * p;
    const Eigen::VectorXd g_new =
        numerical_gradient(f, x_new, cfg.grad_step_relative, cfg.threads, &trace.cost_evaluations);
    const BfgsUpdate upd = bfgs_update_damped(B, x_new - x, g_new - g);
    B = upd.B;

    const double decrease = (fx - f_new) / std::max(1.0, std::abs(fx));
    x = x_new;
    g = g_new;
    fx = f_new;
    trace.iterations.push_back({fx, g.lpNorm<Eigen::Infinity>(), alpha, upd.damped});

    if (decrease < cfg.relative_cost_tolerance) {
      trace.status = OptStatus::Converged;
      break;
    }
  }
  res.x = x;
  trace.final_cost = fx;
  return res;
}

}  // namespace magcal
