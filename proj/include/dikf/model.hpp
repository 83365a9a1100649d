#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "dikf/errors.hpp"

namespace dikf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Lower bound on declared constraint variance (Å² or rad²).
inline constexpr double kVarianceFloor = 1e-8;

/// Atom-major coordinate vector (x1 y1 z1 x2 y2 z2 ... zN), Ångstroms.
class StateVector {
 public:
  StateVector() = default;

  explicit StateVector(Eigen::VectorXd coords) : coords_(std::move(coords)) {
    if (coords_.size() == 0 || coords_.size() % 3 != 0) {
      throw std::invalid_argument("state length must be a positive multiple of 3");
    }
    if (!coords_.allFinite()) {
      throw std::invalid_argument("state contains non-finite coordinates");
    }
  }

  static StateVector zeros(std::size_t n_atoms) {
    if (n_atoms == 0) throw std::invalid_argument("n_atoms must be >= 1");
    return StateVector(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * n_atoms)));
  }

  std::size_t n_atoms() const { return static_cast<std::size_t>(coords_.size()) / 3; }
  Eigen::Index dim() const { return coords_.size(); }

  const Eigen::VectorXd& coords() const { return coords_; }
  Eigen::VectorXd& mutable_coords() { return coords_; }

  Vec3 atom(std::size_t i) const { return coords_.segment<3>(static_cast<Eigen::Index>(3 * i)); }
  void set_atom(std::size_t i, const Vec3& p) {
    coords_.segment<3>(static_cast<Eigen::Index>(3 * i)) = p;
  }

  bool is_finite() const { return coords_.allFinite(); }

  friend bool operator==(const StateVector& a, const StateVector& b) {
    return a.coords_.size() == b.coords_.size() && a.coords_ == b.coords_;
  }

 private:
  Eigen::VectorXd coords_;
};

/// Dense 3N x 3N variance/covariance matrix of a StateVector, Å².
class CovarianceMatrix {
 public:
  CovarianceMatrix() = default;

  explicit CovarianceMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols() || entries_.rows() == 0 || entries_.rows() % 3 != 0) {
      throw std::invalid_argument("covariance must be square with dimension 3N");
    }
  }

  std::size_t n_atoms() const { return static_cast<std::size_t>(entries_.rows()) / 3; }
  Eigen::Index dim() const { return entries_.rows(); }

  const Eigen::MatrixXd& entries() const { return entries_; }
  Eigen::MatrixXd& mutable_entries() { return entries_; }

  void symmetrize() {
    // In-place (C + C^T) / 2 without aliasing the transpose.
    const Eigen::Index n = entries_.rows();
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = j + 1; i < n; ++i) {
        const double m = 0.5 * (entries_(i, j) + entries_(j, i));
        entries_(i, j) = m;
        entries_(j, i) = m;
      }
    }
  }

  /// max |C - C^T| over all entries.
  double asymmetry() const { return (entries_ - entries_.transpose()).cwiseAbs().maxCoeff(); }
  double min_diagonal() const { return entries_.diagonal().minCoeff(); }

  friend bool operator==(const CovarianceMatrix& a, const CovarianceMatrix& b) {
    return a.entries_.rows() == b.entries_.rows() && a.entries_ == b.entries_;
  }

 private:
  Eigen::MatrixXd entries_;
};

enum class ConstraintKind { distance, angle, dihedral };

constexpr std::size_t arity(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::distance: return 2;
    case ConstraintKind::angle: return 3;
    case ConstraintKind::dihedral: return 4;
  }
  return 0;
}

inline std::string_view to_string(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::distance: return "distance";
    case ConstraintKind::angle: return "angle";
    case ConstraintKind::dihedral: return "dihedral";
  }
  return "?";
}

inline ConstraintKind parse_constraint_kind(std::string_view s) {
  if (s == "distance") return ConstraintKind::distance;
  if (s == "angle") return ConstraintKind::angle;
  if (s == "dihedral") return ConstraintKind::dihedral;
  throw std::invalid_argument("unknown constraint kind: " + std::string(s));
}

/// One scalar measurement z = h(x) + v on 2, 3 or 4 atoms.
struct Constraint {
  ConstraintKind kind = ConstraintKind::distance;
  std::array<std::size_t, 4> atoms{};
  double measured = 0.0;  // Å for distance, radians otherwise
  double variance = 1.0;  // Å² or rad²
  std::int64_t id = 0;

  /// Validates arity and index distinctness; floors the variance.
  static Constraint make(ConstraintKind kind, std::span<const std::size_t> atoms, double measured,
                         double variance, std::int64_t id) {
    if (atoms.size() != arity(kind)) {
      throw std::invalid_argument("constraint arity does not match kind");
    }
    for (std::size_t a = 0; a < atoms.size(); ++a) {
      for (std::size_t b = a + 1; b < atoms.size(); ++b) {
        if (atoms[a] == atoms[b]) throw std::invalid_argument("constraint atoms must be distinct");
      }
    }
    if (!std::isfinite(measured) || !(variance >= 0.0) || !std::isfinite(variance)) {
      throw std::invalid_argument("constraint measured/variance must be finite, variance >= 0");
    }
    Constraint c;
    c.kind = kind;
    for (std::size_t a = 0; a < atoms.size(); ++a) c.atoms[a] = atoms[a];
    c.measured = measured;
    c.variance = std::max(variance, kVarianceFloor);
    c.id = id;
    return c;
  }

  static Constraint distance(std::size_t i, std::size_t j, double measured, double variance,
                             std::int64_t id = 0) {
    const std::array<std::size_t, 2> a{i, j};
    return make(ConstraintKind::distance, a, measured, variance, id);
  }
  static Constraint angle(std::size_t i, std::size_t j, std::size_t k, double measured,
                          double variance, std::int64_t id = 0) {
    const std::array<std::size_t, 3> a{i, j, k};
    return make(ConstraintKind::angle, a, measured, variance, id);
  }
  static Constraint dihedral(std::size_t i, std::size_t j, std::size_t k, std::size_t l,
                             double measured, double variance, std::int64_t id = 0) {
    const std::array<std::size_t, 4> a{i, j, k, l};
    return make(ConstraintKind::dihedral, a, measured, variance, id);
  }

  std::span<const std::size_t> indices() const { return {atoms.data(), arity(kind)}; }

  /// Throws std::invalid_argument if any index is outside [0, n_atoms).
  void validate(std::size_t n_atoms) const {
    for (std::size_t a : indices()) {
      if (a >= n_atoms) throw std::invalid_argument("constraint atom index out of range");
    }
  }

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

enum class Ordering { sorted, random, fixed };

inline std::string_view to_string(Ordering o) {
  switch (o) {
    case Ordering::sorted: return "sorted";
    case Ordering::random: return "random";
    case Ordering::fixed: return "fixed";
  }
  return "?";
}

inline Ordering parse_ordering(std::string_view s) {
  if (s == "sorted") return Ordering::sorted;
  if (s == "random") return Ordering::random;
  if (s == "fixed") return Ordering::fixed;
  throw std::invalid_argument("unknown ordering: " + std::string(s));
}

struct SolveConfig {
  Ordering ordering = Ordering::sorted;
  int max_outer_cycles = 100;
  double avg_stop = 0.3;   // SD
  double max_stop = 1.0;   // SD
  double inner_tol = 0.01; // Å, infinity norm of the iterate change
  int inner_max_iters = 3;
  double init_variance = 100.0;  // Å²
  std::pair<double, double> init_coord_range{0.0, 50.0};
  std::uint64_t seed = 0;
  // When false the solve runs all max_outer_cycles regardless of the stop test.
  bool stop_on_convergence = true;

  void validate() const {
    if (max_outer_cycles < 1) throw std::invalid_argument("max_outer_cycles must be >= 1");
    if (inner_max_iters < 1) throw std::invalid_argument("inner_max_iters must be >= 1");
    if (!(avg_stop > 0) || !(max_stop > 0) || !(inner_tol > 0)) {
      throw std::invalid_argument("tolerances must be positive");
    }
    if (!(init_variance > 0)) throw std::invalid_argument("init_variance must be positive");
    if (!(init_coord_range.first <= init_coord_range.second)) {
      throw std::invalid_argument("init_coord_range must satisfy low <= high");
    }
  }
};

struct CycleReport {
  int cycle = 0;
  double avg_error = 0.0;  // SD
  double max_error = 0.0;  // SD
  std::optional<double> rmsd_to_target;  // Å
  double wall_time = 0.0;  // seconds
  int skipped = 0;
};

/// Independent sub-seed for a named random stream (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform random coordinates in [range.first, range.second], deterministic in seed.
inline StateVector init_state(std::size_t n_atoms, std::pair<double, double> range,
                              std::uint64_t seed) {
  if (n_atoms == 0) throw std::invalid_argument("n_atoms must be >= 1");
  if (!(range.first <= range.second)) throw std::invalid_argument("range low must not exceed high");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(range.first, range.second);
  Eigen::VectorXd x(static_cast<Eigen::Index>(3 * n_atoms));
  for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = range.first == range.second ? range.first : coord(rng);
  return StateVector(std::move(x));
}

inline CovarianceMatrix init_covariance(std::size_t n_atoms, double sigma2) {
  if (n_atoms == 0) throw std::invalid_argument("n_atoms must be >= 1");
  if (!(sigma2 > 0)) throw std::invalid_argument("sigma2 must be positive");
  const auto d = static_cast<Eigen::Index>(3 * n_atoms);
  return CovarianceMatrix(Eigen::MatrixXd::Identity(d, d) * sigma2);
}

/// Rows 3i..3i+2, columns 3j..3j+2.
inline Mat3 atom_block(const CovarianceMatrix& c, std::size_t i, std::size_t j) {
  if (i >= c.n_atoms() || j >= c.n_atoms()) throw std::invalid_argument("atom index out of range");
  return c.entries().block<3, 3>(static_cast<Eigen::Index>(3 * i), static_cast<Eigen::Index>(3 * j));
}

}  // namespace dikf
