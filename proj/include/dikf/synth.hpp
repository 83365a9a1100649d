#pragma once

// Synthetic targets and constraint sets: a self-avoiding Calpha-like chain,
// all pairwise distances, random subsets, and the three noise models.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dikf/errors.hpp"
#include "dikf/model.hpp"

namespace dikf {

inline constexpr double kBondLength = 3.8;       // Å, consecutive atoms
inline constexpr double kMinNonBonded = 4.0;     // Å, any non-consecutive pair
inline constexpr double kExactVariance = 1e-4;   // Å², "exact" distances

enum class NoiseModel { exact, uniform_variance_gaussian, positive_bias };

inline std::string_view to_string(NoiseModel m) {
  switch (m) {
    case NoiseModel::exact: return "exact";
    case NoiseModel::uniform_variance_gaussian: return "gaussian";
    case NoiseModel::positive_bias: return "bias";
  }
  return "?";
}

inline NoiseModel parse_noise_model(std::string_view s) {
  if (s == "exact") return NoiseModel::exact;
  if (s == "gaussian" || s == "uniform_variance_gaussian") return NoiseModel::uniform_variance_gaussian;
  if (s == "bias" || s == "positive_bias") return NoiseModel::positive_bias;
  throw std::invalid_argument("unknown noise model: " + std::string(s));
}

/// param is v_fixed (exact), v_max (gaussian) or mean_shift (bias).
struct NoiseSpec {
  NoiseModel model = NoiseModel::exact;
  double param = kExactVariance;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(param > 0) || !std::isfinite(param)) throw std::invalid_argument("noise parameter must be positive");
  }
  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

struct Dataset {
  std::size_t n_atoms = 0;
  std::vector<Constraint> constraints;
  NoiseSpec noise;
  std::optional<StateVector> target;
  double fraction = 1.0;
  std::uint64_t seed = 0;

  bool has_dihedrals() const {
    return std::any_of(constraints.begin(), constraints.end(),
                       [](const Constraint& c) { return c.kind == ConstraintKind::dihedral; });
  }

  /// Index range and duplicate checks. Reversed atom lists describe the same
  /// geometric quantity and count as duplicates.
  void validate() const {
    if (n_atoms == 0) throw std::invalid_argument("dataset: n_atoms must be >= 1");
    if (target && target->n_atoms() != n_atoms) throw std::invalid_argument("dataset: target size mismatch");
    std::set<std::pair<int, std::vector<std::size_t>>> seen;
    for (const Constraint& c : constraints) {
      c.validate(n_atoms);
      std::vector<std::size_t> key(c.indices().begin(), c.indices().end());
      std::vector<std::size_t> rev(key.rbegin(), key.rend());
      if (rev < key) key = rev;
      if (!seen.emplace(static_cast<int>(c.kind), std::move(key)).second) {
        throw std::invalid_argument("dataset: duplicate constraint " + std::to_string(c.id));
      }
    }
  }
};

/// Self-avoiding random walk with kBondLength steps and every non-consecutive
/// pair at least kMinNonBonded apart.
inline StateVector generate_target(std::size_t n_atoms, std::uint64_t seed) {
  if (n_atoms < 2) throw std::invalid_argument("generate_target: need at least 2 atoms");
  constexpr int kTriesPerStep = 200;
  constexpr int kRestarts = 100;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Vec3> pts;
  for (int restart = 0; restart < kRestarts; ++restart) {
    pts.assign(1, Vec3::Zero());
    while (pts.size() < n_atoms) {
      bool placed = false;
      for (int t = 0; t < kTriesPerStep && !placed; ++t) {
        Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
        const double len = dir.norm();
        if (len < 1e-12) continue;
        const Vec3 cand = pts.back() + dir * (kBondLength / len);
        bool ok = true;
        for (std::size_t k = 0; k + 1 < pts.size() && ok; ++k) {
          ok = (cand - pts[k]).norm() >= kMinNonBonded;
        }
        if (ok) {
          pts.push_back(cand);
          placed = true;
        }
      }
      if (!placed) break;
    }
    if (pts.size() == n_atoms) {
      StateVector x = StateVector::zeros(n_atoms);
      for (std::size_t i = 0; i < n_atoms; ++i) x.set_atom(i, pts[i]);
      return x;
    }
  }
  throw GenerationFailed("generate_target: retry budget exhausted");
}

/// One distance constraint per unordered pair, ids in (i, j) lexicographic order.
inline std::vector<Constraint> enumerate_distances(const StateVector& target,
                                                   double variance = kExactVariance) {
  const std::size_t n = target.n_atoms();
  if (n < 2) throw std::invalid_argument("enumerate_distances: need at least 2 atoms");
  std::vector<Constraint> out;
  out.reserve(n * (n - 1) / 2);
  std::int64_t id = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      out.push_back(Constraint::distance(i, j, (target.atom(i) - target.atom(j)).norm(), variance, id++));
    }
  }
  return out;
}

/// Uniform sample without replacement of round(fraction * n) constraints,
/// returned in their original relative order.
inline std::vector<Constraint> sample_fraction(const std::vector<Constraint>& constraints,
                                               double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("fraction must lie in (0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(constraints.size())));
  if (count == 0) throw std::invalid_argument("fraction selects no constraints");
  std::vector<std::size_t> idx(constraints.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<Constraint> out;
  out.reserve(count);
  for (std::size_t k : idx) out.push_back(constraints[k]);
  return out;
}

/// Changes only measured values and declared variances. The declared variance
/// is always the one the noise was drawn with.
inline std::vector<Constraint> apply_noise(std::vector<Constraint> constraints, const NoiseSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Constraint& c : constraints) {
    switch (spec.model) {
      case NoiseModel::exact:
        c.variance = std::max(spec.param, kVarianceFloor);
        break;
      case NoiseModel::uniform_variance_gaussian: {
        const double v = std::max(spec.param * unit(rng), kVarianceFloor);
        c.measured += std::sqrt(v) * gauss(rng);
        c.variance = v;
        break;
      }
      case NoiseModel::positive_bias:
        c.measured += 2.0 * spec.param * unit(rng);
        c.variance = spec.param * spec.param;
        break;
    }
  }
  return constraints;
}

/// Target from `seed`, subset from a derived stream of `seed`, noise from
/// `noise.seed`. Datasets with equal seeds but different noise share their
/// target and subset.
inline Dataset make_dataset(std::size_t n_atoms, double fraction, const NoiseSpec& noise,
                            std::uint64_t seed) {
  Dataset d;
  d.n_atoms = n_atoms;
  d.noise = noise;
  d.fraction = fraction;
  d.seed = seed;
  d.target = generate_target(n_atoms, seed);
  auto all = enumerate_distances(*d.target);
  auto subset = fraction < 1.0 ? sample_fraction(all, fraction, derive_seed(seed, 1)) : std::move(all);
  d.constraints = apply_noise(std::move(subset), noise);
  d.validate();
  return d;
}

}  // namespace dikf
