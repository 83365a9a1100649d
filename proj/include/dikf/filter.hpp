#pragma once

// Extended, iterated Kalman update for a single scalar constraint.
//
// For pass i = 1, 2, ... the observation model is relinearized at the
// previous iterate x_{i-1} (x_0 = x_old) and
//
//   K_i = C H_i^T / (H_i C H_i^T + v)
//   x_i = x_old + K_i [ z - h(x_{i-1}) - H_i (x_old - x_{i-1}) ]
//
// with C the covariance on entry. The covariance is updated once at the end,
// C <- C - K H C, using the gain and Jacobian of the last pass, and then
// symmetrized.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <stdexcept>

#include "dikf/constraints.hpp"
#include "dikf/errors.hpp"
#include "dikf/model.hpp"

namespace dikf {

/// Gain together with the intermediate products it is built from.
struct GainTerms {
  Eigen::VectorXd cht;         // C H^T
  double innovation_variance;  // H C H^T + v
  Eigen::VectorXd gain;        // C H^T / (H C H^T + v)
};

inline GainTerms gain_terms(const CovarianceMatrix& c, const SparseJacobian& h, double v) {
  if (!(v > 0)) throw std::invalid_argument("measurement variance must be positive");
  const Eigen::MatrixXd& m = c.entries();
  GainTerms t;
  t.cht = Eigen::VectorXd::Zero(m.rows());
  for (const auto& [idx, val] : h.entries()) t.cht.noalias() += val * m.col(idx);
  t.innovation_variance = h.dot(t.cht) + v;
  if (!(t.innovation_variance > 0) || !std::isfinite(t.innovation_variance)) {
    throw NumericalBreakdown("innovation variance H C H^T + v is not positive");
  }
  t.gain = t.cht / t.innovation_variance;
  return t;
}

/// K = C H^T (H C H^T + v)^-1. Cost is O(3N k) for k Jacobian non-zeros.
inline Eigen::VectorXd kalman_gain(const CovarianceMatrix& c, const SparseJacobian& h, double v) {
  return gain_terms(c, h, v).gain;
}

struct UpdateStats {
  int inner_iterations = 0;
  double innovation = 0.0;  // z - h(x_old), wrapped for dihedrals
  bool skipped = false;
};

struct UpdateOutcome {
  StateVector state;
  CovarianceMatrix covariance;
  int inner_iterations = 0;
  double innovation = 0.0;
  bool skipped = false;
};

/// Scalar observation model: evaluates h and its Jacobian at a state and
/// forms the residual z - h (which may wrap for periodic quantities).
template <class M>
concept ObservationModel = requires(const M& m, const StateVector& x, double z, double h) {
  { m.predict(x) } -> std::convertible_to<Prediction>;
  { m.residual(z, h) } -> std::convertible_to<double>;
};

/// Adapts a Constraint to ObservationModel.
struct ConstraintModel {
  const Constraint& constraint;
  Prediction predict(const StateVector& x) const { return dikf::predict(constraint, x); }
  double residual(double z, double h) const {
    return constraint.kind == ConstraintKind::dihedral ? wrap_angle(z - h) : z - h;
  }
};

/// Iterated update of (x, C) in place for measurement z with variance v.
/// SingularGeometry at the entry point skips the update.
template <ObservationModel Model>
UpdateStats iterated_update(StateVector& x, CovarianceMatrix& cov, const Model& model, double z, double v,
                            const SolveConfig& cfg) {
  if (x.dim() != cov.dim()) throw std::invalid_argument("state and covariance dimensions differ");

  UpdateStats stats;
  Prediction pred;
  try {
    pred = model.predict(x);
  } catch (const SingularGeometry&) {
    stats.skipped = true;
    return stats;
  }
  stats.innovation = model.residual(z, pred.value);

  const Eigen::VectorXd x_old = x.coords();
  Eigen::VectorXd iterate = x_old;
  Eigen::VectorXd next(x_old.size());
  GainTerms terms;
  int passes = 0;
  bool converged = false;
  for (int pass = 1; pass <= cfg.inner_max_iters; ++pass) {
    terms = gain_terms(cov, pred.jacobian, v);
    double lin = 0.0;  // H (x_old - x_{i-1})
    for (const auto& [idx, val] : pred.jacobian.entries()) lin += val * (x_old[idx] - iterate[idx]);
    const double nu = model.residual(z, pred.value) - lin;
    next = x_old + terms.gain * nu;
    const double step = (next - iterate).template lpNorm<Eigen::Infinity>();
    iterate.swap(next);
    passes = pass;
    if (step < cfg.inner_tol) {
      converged = true;
      break;
    }
    if (pass == cfg.inner_max_iters) break;
    try {
      x.mutable_coords() = iterate;
      pred = model.predict(x);
    } catch (const SingularGeometry&) {
      break;
    }
  }
  if (!iterate.allFinite()) throw NumericalBreakdown("non-finite state after update");
  x.mutable_coords() = iterate;
  // A pass that only confirms the previous iterate does not count as an iteration.
  stats.inner_iterations = (converged && passes > 1) ? passes - 1 : passes;

  // C - K (H C), followed by (C + C^T)/2, fused into one sweep. H C = (C H^T)^T.
  Eigen::MatrixXd& m = cov.mutable_entries();
  const Eigen::VectorXd& k = terms.gain;
  const Eigen::VectorXd& u = terms.cht;
  const Eigen::Index n = m.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    m(j, j) -= k[j] * u[j];
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double s = 0.5 * ((m(i, j) - k[i] * u[j]) + (m(j, i) - k[j] * u[i]));
      m(i, j) = s;
      m(j, i) = s;
    }
  }
  return stats;
}

/// In-place form of apply_constraint; used by the cycle loop to avoid copying C.
inline UpdateStats apply_constraint_inplace(StateVector& x, CovarianceMatrix& cov, const Constraint& c,
                                            const SolveConfig& cfg) {
  if (x.dim() != cov.dim()) throw std::invalid_argument("state and covariance dimensions differ");
  c.validate(x.n_atoms());
  return iterated_update(x, cov, ConstraintModel{c}, c.measured, c.variance, cfg);
}

/// Applies one constraint to (x, C). A singular geometry at entry skips the
/// constraint and returns the inputs unchanged.
inline UpdateOutcome apply_constraint(const StateVector& x, const CovarianceMatrix& cov,
                                      const Constraint& c, const SolveConfig& cfg) {
  UpdateOutcome out{x, cov, 0, 0.0, false};
  const UpdateStats s = apply_constraint_inplace(out.state, out.covariance, c, cfg);
  out.inner_iterations = s.inner_iterations;
  out.innovation = s.innovation;
  out.skipped = s.skipped;
  return out;
}

}  // namespace dikf
