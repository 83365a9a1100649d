#pragma once

// The outer loop: serial constraint introduction, error evaluation, stop
// test, covariance reheat and reordering, repeated until the end condition
// holds or the cycle budget runs out.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dikf/constraints.hpp"
#include "dikf/errors.hpp"
#include "dikf/eval.hpp"
#include "dikf/filter.hpp"
#include "dikf/model.hpp"
#include "dikf/synth.hpp"

namespace dikf {

using OrderingStrategy = Ordering;

/// Called after every constraint application: (position in cycle, constraint, x, C).
using UpdateObserver =
    std::function<void(std::size_t, const Constraint&, const StateVector&, const CovarianceMatrix&)>;

struct Solution {
  StateVector state;
  CovarianceMatrix covariance;
  std::vector<CycleReport> trace;
  std::vector<std::pair<std::int64_t, double>> per_constraint_errors;  // (id, signed SD)
  bool converged = false;
  int cycles_run = 0;
  int best_cycle = 0;
};

/// Breakdown during a solve; carries the cycles completed before it.
class SolveBreakdown : public NumericalBreakdown {
 public:
  SolveBreakdown(const std::string& what, std::vector<CycleReport> partial)
      : NumericalBreakdown(what), trace(std::move(partial)) {}
  std::vector<CycleReport> trace;
};

/// Permutation of constraint positions for the next cycle. Errors are aligned
/// with constraints; +inf marks a constraint that could not be evaluated.
inline std::vector<std::size_t> order_constraints(std::span<const Constraint> constraints,
                                                  std::span<const double> errors,
                                                  OrderingStrategy strategy, std::mt19937_64& rng) {
  if (constraints.size() != errors.size()) throw std::invalid_argument("order_constraints: length mismatch");
  std::vector<std::size_t> perm(constraints.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  switch (strategy) {
    case Ordering::fixed:
      break;
    case Ordering::random:
      for (std::size_t k = perm.size(); k > 1; --k) {
        std::uniform_int_distribution<std::size_t> pick(0, k - 1);
        std::swap(perm[k - 1], perm[pick(rng)]);
      }
      break;
    case Ordering::sorted:
      std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        const double ea = std::abs(errors[a]);
        const double eb = std::abs(errors[b]);
        if (ea != eb) return ea > eb;
        return constraints[a].id < constraints[b].id;
      });
      break;
  }
  return perm;
}

struct CycleResult {
  StateVector state;
  CovarianceMatrix covariance;
  std::vector<double> errors;  // aligned with the input order; +inf if unevaluable
  int skipped = 0;
};

namespace detail {

// Errors after a cycle, evaluated against the final state.
inline std::vector<double> evaluate_errors(std::span<const Constraint> constraints, const StateVector& x) {
  std::vector<double> errs(constraints.size());
  for (std::size_t k = 0; k < constraints.size(); ++k) {
    try {
      errs[k] = standardized_error(constraints[k], x);
    } catch (const SingularGeometry&) {
      errs[k] = std::numeric_limits<double>::infinity();
    }
  }
  return errs;
}

template <class Indexer>
int run_cycle_inplace(StateVector& x, CovarianceMatrix& cov, std::size_t count, Indexer&& at,
                      const SolveConfig& cfg, const UpdateObserver& observer) {
  int skipped = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const Constraint& c = at(k);
    UpdateStats s;
    try {
      s = apply_constraint_inplace(x, cov, c, cfg);
    } catch (const NumericalBreakdown& e) {
      throw NumericalBreakdown("constraint " + std::to_string(c.id) + " at position " + std::to_string(k) +
                               ": " + e.what());
    }
    if (s.skipped) ++skipped;
    if (observer) observer(k, c, x, cov);
  }
  return skipped;
}

}  // namespace detail

/// One serial pass over `constraints` in the given order.
inline CycleResult run_cycle(StateVector x, CovarianceMatrix cov, std::span<const Constraint> constraints,
                             const SolveConfig& cfg, const UpdateObserver& observer = {}) {
  CycleResult r;
  r.skipped = detail::run_cycle_inplace(
      x, cov, constraints.size(), [&](std::size_t k) -> const Constraint& { return constraints[k]; }, cfg,
      observer);
  r.errors = detail::evaluate_errors(constraints, x);
  r.state = std::move(x);
  r.covariance = std::move(cov);
  return r;
}

/// End condition: average OR maximum below its threshold.
inline bool check_stop(double avg, double max, const SolveConfig& cfg) {
  return avg <= cfg.avg_stop || max <= cfg.max_stop;
}

/// Mean and max of |e| over finite entries.
inline std::pair<double, double> summarize_errors(std::span<const double> errors) {
  double sum = 0.0;
  double mx = 0.0;
  std::size_t n = 0;
  for (double e : errors) {
    if (!std::isfinite(e)) continue;
    sum += std::abs(e);
    mx = std::max(mx, std::abs(e));
    ++n;
  }
  return {n ? sum / static_cast<double>(n) : 0.0, mx};
}

struct SolveOptions {
  std::optional<StateVector> target;         // per-cycle RMSD when present
  std::optional<StateVector> initial_state;  // overrides the random start
  UpdateObserver observer;
};

inline Solution solve(const Dataset& dataset, const SolveConfig& cfg, const SolveOptions& opts = {}) {
  cfg.validate();
  dataset.validate();
  const std::size_t n = dataset.n_atoms;
  const std::vector<Constraint>& cons = dataset.constraints;
  if (opts.target && opts.target->n_atoms() != n) throw std::invalid_argument("solve: target size mismatch");
  if (opts.initial_state && opts.initial_state->n_atoms() != n) {
    throw std::invalid_argument("solve: initial state size mismatch");
  }
  const bool allow_reflection = !dataset.has_dihedrals();

  StateVector x = opts.initial_state ? *opts.initial_state : init_state(n, cfg.init_coord_range, cfg.seed);
  const CovarianceMatrix c0 = init_covariance(n, cfg.init_variance);
  CovarianceMatrix cov = c0;
  std::mt19937_64 order_rng(derive_seed(cfg.seed, 2));

  std::vector<std::size_t> order(cons.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Solution sol;
  double best_avg = std::numeric_limits<double>::infinity();
  std::vector<double> best_errors;

  for (int cycle = 1; cycle <= cfg.max_outer_cycles; ++cycle) {
    const auto t0 = std::chrono::steady_clock::now();
    int skipped = 0;
    try {
      skipped = detail::run_cycle_inplace(
          x, cov, order.size(), [&](std::size_t k) -> const Constraint& { return cons[order[k]]; }, cfg,
          opts.observer);
    } catch (const NumericalBreakdown& e) {
      throw SolveBreakdown("cycle " + std::to_string(cycle) + ", " + e.what(), sol.trace);
    }
    std::vector<double> errors = detail::evaluate_errors(cons, x);
    const auto [avg, mx] = summarize_errors(errors);

    CycleReport rep;
    rep.cycle = cycle;
    rep.avg_error = avg;
    rep.max_error = mx;
    rep.skipped = skipped;
    if (opts.target && n >= 3) rep.rmsd_to_target = superpose_rmsd(x, *opts.target, allow_reflection).rmsd;
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    sol.trace.push_back(rep);
    sol.cycles_run = cycle;

    if (avg < best_avg || sol.best_cycle == 0) {
      best_avg = avg;
      sol.state = x;
      sol.covariance = cov;
      sol.best_cycle = cycle;
      best_errors = errors;
    }

    if (check_stop(avg, mx, cfg)) {
      sol.converged = true;
      if (cfg.stop_on_convergence) break;
    }
    if (cycle < cfg.max_outer_cycles) {
      cov = c0;  // reheat
      order = order_constraints(cons, errors, cfg.ordering, order_rng);
    }
  }

  sol.per_constraint_errors.reserve(cons.size());
  for (std::size_t k = 0; k < cons.size(); ++k) sol.per_constraint_errors.emplace_back(cons[k].id, best_errors[k]);
  return sol;
}

}  // namespace dikf
