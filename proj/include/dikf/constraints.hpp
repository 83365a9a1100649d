#pragma once

// Observation models h(x) for distance, vertex-angle and dihedral constraints,
// with their analytic Jacobians. Each Jacobian row is sparse: only the 3 x arity
// coordinates of the participating atoms are non-zero.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>

#include "dikf/errors.hpp"
#include "dikf/model.hpp"

namespace dikf {

/// Minimum separation between points that a geometric model accepts (Å).
inline constexpr double kMinSeparation = 1e-8;
/// Minimum sine of the angle between bond vectors before they count as parallel.
inline constexpr double kMinParallelSine = 1e-10;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, two_pi);  // [-pi, pi]
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

/// Sparse row dh/dx. Indices are strictly increasing flat coordinate indices.
class SparseJacobian {
 public:
  using Entry = std::pair<Eigen::Index, double>;

  SparseJacobian() = default;

  std::span<const Entry> entries() const { return {entries_.data(), size_}; }
  std::size_t size() const { return size_; }

  double dot(const Eigen::VectorXd& v) const {
    double s = 0.0;
    for (const auto& [idx, val] : entries()) s += val * v[idx];
    return s;
  }

  /// Dense copy of length `dim`, for tests and oracles.
  Eigen::VectorXd to_dense(Eigen::Index dim) const {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(dim);
    for (const auto& [idx, val] : entries()) d[idx] = val;
    return d;
  }

  /// Entries must have strictly increasing indices; at most 12.
  static SparseJacobian from_entries(std::span<const Entry> entries) {
    if (entries.size() > 12) throw std::invalid_argument("sparse jacobian: too many entries");
    SparseJacobian j;
    for (const Entry& e : entries) {
      if (j.size_ > 0 && e.first <= j.entries_[j.size_ - 1].first) {
        throw std::invalid_argument("sparse jacobian: indices must be strictly increasing");
      }
      j.entries_[j.size_++] = e;
    }
    return j;
  }

  // Builds from per-atom gradients; atoms must be distinct.
  template <std::size_t K>
  static SparseJacobian from_atoms(const std::array<std::size_t, K>& atoms,
                                   const std::array<Vec3, K>& grads) {
    SparseJacobian j;
    std::array<std::size_t, K> order{};
    for (std::size_t a = 0; a < K; ++a) order[a] = a;
    std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return atoms[l] < atoms[r]; });
    for (std::size_t a : order) {
      for (int axis = 0; axis < 3; ++axis) {
        j.entries_[j.size_++] = {static_cast<Eigen::Index>(3 * atoms[a] + axis), grads[a][axis]};
      }
    }
    return j;
  }

 private:
  std::array<Entry, 12> entries_{};
  std::size_t size_ = 0;
};

struct Prediction {
  double value = 0.0;
  SparseJacobian jacobian;
};

namespace detail {

inline void check_range(const StateVector& x, std::span<const std::size_t> atoms) {
  for (std::size_t a : atoms) {
    if (a >= x.n_atoms()) throw std::invalid_argument("atom index out of range");
  }
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    for (std::size_t b = a + 1; b < atoms.size(); ++b) {
      if (atoms[a] == atoms[b]) throw std::invalid_argument("atom indices must be distinct");
    }
  }
}

}  // namespace detail

/// Euclidean distance between atoms i and j.
inline Prediction eval_distance(const StateVector& x, std::size_t i, std::size_t j) {
  const std::array<std::size_t, 2> atoms{i, j};
  detail::check_range(x, atoms);
  const Vec3 d = x.atom(i) - x.atom(j);
  const double r = d.norm();
  if (r < kMinSeparation) throw SingularGeometry("distance: coincident atoms");
  const Vec3 u = d / r;
  return {r, SparseJacobian::from_atoms(atoms, std::array<Vec3, 2>{u, Vec3(-u)})};
}

/// Angle at vertex j between rays j->i and j->k, in [0, pi].
inline Prediction eval_angle(const StateVector& x, std::size_t i, std::size_t j, std::size_t k) {
  const std::array<std::size_t, 3> atoms{i, j, k};
  detail::check_range(x, atoms);
  const Vec3 a = x.atom(i) - x.atom(j);
  const Vec3 b = x.atom(k) - x.atom(j);
  const double la = a.norm();
  const double lb = b.norm();
  if (la < kMinSeparation || lb < kMinSeparation) throw SingularGeometry("angle: coincident atoms");
  const Vec3 ua = a / la;
  const Vec3 ub = b / lb;
  const double sin_t = ua.cross(ub).norm();
  const double cos_t = ua.dot(ub);
  if (sin_t < kMinParallelSine) throw SingularGeometry("angle: collinear bond vectors");
  const double theta = std::atan2(sin_t, cos_t);

  // d(theta)/da = -(ub - cos ua) / (|a| sin), likewise for b.
  const Vec3 ga = -(ub - cos_t * ua) / (la * sin_t);
  const Vec3 gb = -(ua - cos_t * ub) / (lb * sin_t);
  return {theta, SparseJacobian::from_atoms(atoms, std::array<Vec3, 3>{ga, Vec3(-ga - gb), gb})};
}

/// Signed dihedral between planes (i,j,k) and (j,k,l), in (-pi, pi].
/// cis = 0, trans = pi; the sign follows the IUPAC convention.
inline Prediction eval_dihedral(const StateVector& x, std::size_t i, std::size_t j, std::size_t k,
                                std::size_t l) {
  const std::array<std::size_t, 4> atoms{i, j, k, l};
  detail::check_range(x, atoms);
  const Vec3 b1 = x.atom(j) - x.atom(i);
  const Vec3 b2 = x.atom(k) - x.atom(j);
  const Vec3 b3 = x.atom(l) - x.atom(k);
  const double l1 = b1.norm();
  const double l2 = b2.norm();
  const double l3 = b3.norm();
  if (l1 < kMinSeparation || l2 < kMinSeparation || l3 < kMinSeparation) {
    throw SingularGeometry("dihedral: coincident atoms");
  }
  const Vec3 n1 = b1.cross(b2);
  const Vec3 n2 = b2.cross(b3);
  const double n1sq = n1.squaredNorm();
  const double n2sq = n2.squaredNorm();
  if (std::sqrt(n1sq) < kMinParallelSine * l1 * l2 || std::sqrt(n2sq) < kMinParallelSine * l2 * l3) {
    throw SingularGeometry("dihedral: collinear bond vectors");
  }
  const double phi = wrap_angle(std::atan2(l2 * b1.dot(n2), n1.dot(n2)));

  // Gradient in the form of Blondel & Karplus (1996).
  const Vec3 gi = -l2 / n1sq * n1;
  const Vec3 gl = l2 / n2sq * n2;
  const double f1 = -b1.dot(b2) / (l2 * l2);
  const double f3 = -b3.dot(b2) / (l2 * l2);
  const Vec3 gj = (f1 - 1.0) * gi - f3 * gl;
  const Vec3 gk = (f3 - 1.0) * gl - f1 * gi;
  return {phi, SparseJacobian::from_atoms(atoms, std::array<Vec3, 4>{gi, gj, gk, gl})};
}

inline Prediction predict(const Constraint& c, const StateVector& x) {
  const auto& a = c.atoms;
  switch (c.kind) {
    case ConstraintKind::distance: return eval_distance(x, a[0], a[1]);
    case ConstraintKind::angle: return eval_angle(x, a[0], a[1], a[2]);
    case ConstraintKind::dihedral: return eval_dihedral(x, a[0], a[1], a[2], a[3]);
  }
  throw std::invalid_argument("unknown constraint kind");
}

/// z - h, wrapped into (-pi, pi] for dihedrals.
inline double residual(const Constraint& c, double predicted) {
  const double r = c.measured - predicted;
  return c.kind == ConstraintKind::dihedral ? wrap_angle(r) : r;
}

/// (z - h(x)) / sqrt(v), in SD units.
inline double standardized_error(const Constraint& c, const StateVector& x) {
  return residual(c, predict(c, x).value) / std::sqrt(c.variance);
}

}  // namespace dikf
