#include "tensorreg/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>

#include "tensorreg/error.hpp"

namespace tensorreg::optim {

namespace {

struct Trial {
  double step = 0.0;
  double value = 0.0;
  double slope = 0.0;  // directional derivative along the search direction
  Eigen::VectorXd grad;
};

// Minimizer of the cubic through (a, fa, da) and (b, fb, db), clamped to the
// interior of [a, b]; falls back to bisection when the cubic is unusable.
double interpolate(const Trial& a, const Trial& b) {
  const double lo = std::min(a.step, b.step);
  const double hi = std::max(a.step, b.step);
  const double mid = 0.5 * (a.step + b.step);
  if (!std::isfinite(a.value) || !std::isfinite(b.value)) return mid;
  const double d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
  const double disc = d1 * d1 - a.slope * b.slope;
  if (disc < 0.0) return mid;
  const double d2 = std::copysign(std::sqrt(disc), b.step - a.step);
  const double denom = b.slope - a.slope + 2.0 * d2;
  if (denom == 0.0) return mid;
  const double t = b.step - (b.step - a.step) * (b.slope + d2 - d1) / denom;
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) return mid;
  return t;
}

class LineSearch {
 public:
  LineSearch(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& dir, double f0, double slope0,
             const LbfgsOptions& opts, int& evaluations)
      : f_(f), x_(x), dir_(dir), f0_(f0), slope0_(slope0), opts_(opts), evaluations_(evaluations) {}

  // Strong-Wolfe search (bracketing phase, then zoom).
  std::optional<Trial> run(double initial_step) {
    Trial prev{0.0, f0_, slope0_, {}};
    double step = initial_step;
    for (int i = 0; i < opts_.max_line_search; ++i) {
      Trial cur = evaluate(step);
      if (!armijo(cur) || (i > 0 && cur.value >= prev.value)) return zoom(prev, cur);
      if (std::abs(cur.slope) <= -opts_.c2 * slope0_) return cur;
      if (cur.slope >= 0.0) return zoom(cur, prev);
      prev = std::move(cur);
      step *= 2.0;
    }
    return fallback(prev);
  }

 private:
  Trial evaluate(double step) {
    Trial t;
    t.step = step;
    t.grad.resize(x_.size());
    t.value = f_(x_ + step * dir_, t.grad);
    ++evaluations_;
    t.slope = std::isfinite(t.value) ? t.grad.dot(dir_) : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(t.value) || !t.grad.allFinite()) t.value = std::numeric_limits<double>::infinity();
    return t;
  }

  bool armijo(const Trial& t) const { return t.value <= f0_ + opts_.c1 * t.step * slope0_; }

  std::optional<Trial> zoom(Trial lo, Trial hi) {
    for (int j = 0; j < opts_.max_line_search; ++j) {
      const double step = interpolate(lo, hi);
      if (std::abs(hi.step - lo.step) <= 1e-16 * std::max(1.0, std::abs(lo.step))) break;
      Trial cur = evaluate(step);
      if (!armijo(cur) || cur.value >= lo.value) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.slope) <= -opts_.c2 * slope0_) return cur;
        if (cur.slope * (hi.step - lo.step) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
    }
    return fallback(lo);
  }

  // Accept a point that only satisfies sufficient decrease.
  std::optional<Trial> fallback(const Trial& t) const {
    if (t.step > 0.0 && std::isfinite(t.value) && t.value < f0_ && t.grad.size() > 0) return t;
    return std::nullopt;
  }

  const Objective& f_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& dir_;
  double f0_;
  double slope0_;
  const LbfgsOptions& opts_;
  int& evaluations_;
};

struct Correction {
  Eigen::VectorXd s;
  Eigen::VectorXd y;
  double rho;
};

Eigen::VectorXd two_loop(const std::deque<Correction>& mem, const Eigen::VectorXd& g) {
  Eigen::VectorXd q = g;
  std::vector<double> alpha(mem.size());
  for (std::size_t k = mem.size(); k-- > 0;) {
    alpha[k] = mem[k].rho * mem[k].s.dot(q);
    q -= alpha[k] * mem[k].y;
  }
  if (!mem.empty()) {
    const auto& last = mem.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t k = 0; k < mem.size(); ++k) {
    const double beta = mem[k].rho * mem[k].y.dot(q);
    q += (alpha[k] - beta) * mem[k].s;
  }
  return -q;
}

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& opts) {
  if (opts.history < 1 || opts.max_iters < 0) throw ArgumentError("invalid L-BFGS options");
  LbfgsResult res;
  res.x = std::move(x0);
  Eigen::VectorXd g(res.x.size());
  res.value = f(res.x, g);
  res.evaluations = 1;
  if (!std::isfinite(res.value) || !g.allFinite())
    throw NumericalError("L-BFGS: objective or gradient is non-finite at the starting point");
  res.initial_value = res.value;

  std::deque<Correction> mem;
  res.status = LbfgsStatus::max_iterations;
  for (int iter = 0;; ++iter) {
    res.grad_inf_norm = g.size() ? g.lpNorm<Eigen::Infinity>() : 0.0;
    if (res.grad_inf_norm < opts.gtol) {
      res.status = LbfgsStatus::converged;
      break;
    }
    if (iter >= opts.max_iters) break;

    Eigen::VectorXd dir = two_loop(mem, g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      mem.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }
    const double step0 = mem.empty() ? std::min(1.0, 1.0 / g.norm()) : 1.0;

    std::optional<Trial> accepted = LineSearch(f, res.x, dir, res.value, slope, opts, res.evaluations).run(step0);
    if (!accepted && !mem.empty()) {
      mem.clear();
      dir = -g;
      slope = -g.squaredNorm();
      accepted = LineSearch(f, res.x, dir, res.value, slope, opts, res.evaluations).run(std::min(1.0, 1.0 / g.norm()));
    }
    if (!accepted) {
      res.status = LbfgsStatus::line_search_failed;
      break;
    }

    Correction c;
    c.s = accepted->step * dir;
    c.y = accepted->grad - g;
    const double sy = c.s.dot(c.y);
    res.x += c.s;
    res.value = accepted->value;
    g = std::move(accepted->grad);
    res.iterations = iter + 1;
    if (sy > 1e-12 * c.s.norm() * c.y.norm()) {
      c.rho = 1.0 / sy;
      mem.push_back(std::move(c));
      if (static_cast<int>(mem.size()) > opts.history) mem.pop_front();
    }
  }
  return res;
}

}  // namespace tensorreg::optim
