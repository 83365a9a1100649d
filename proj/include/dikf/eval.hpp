#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dikf/constraints.hpp"
#include "dikf/errors.hpp"
#include "dikf/model.hpp"

namespace dikf {

/// Default histogram bin width, SD.
inline constexpr double kDefaultBinWidth = 0.5;

struct ErrorStats {
  double avg = 0.0;
  double max = 0.0;
  /// (bin lower edge in SD, count), contiguous bins starting at 0.
  std::vector<std::pair<double, std::size_t>> histogram;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // singular geometry, excluded from everything above
};

/// Mean and max of |E| plus a histogram of |E| with fixed bin width.
inline ErrorStats error_stats(std::span<const Constraint> constraints, const StateVector& x,
                              double bin_width = kDefaultBinWidth) {
  if (!(bin_width > 0)) throw std::invalid_argument("bin_width must be positive");
  ErrorStats st;
  std::vector<double> mags;
  mags.reserve(constraints.size());
  for (const Constraint& c : constraints) {
    try {
      mags.push_back(std::abs(standardized_error(c, x)));
    } catch (const SingularGeometry&) {
      ++st.skipped;
    }
  }
  st.evaluated = mags.size();
  if (mags.empty()) return st;
  double sum = 0.0;
  for (double m : mags) {
    sum += m;
    st.max = std::max(st.max, m);
  }
  st.avg = sum / static_cast<double>(mags.size());
  const auto bins = static_cast<std::size_t>(std::floor(st.max / bin_width)) + 1;
  st.histogram.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) st.histogram[b] = {static_cast<double>(b) * bin_width, 0};
  for (double m : mags) {
    auto b = static_cast<std::size_t>(std::floor(m / bin_width));
    st.histogram[std::min(b, bins - 1)].second++;
  }
  return st;
}

/// Rigid (optionally improper) map estimate -> target: p' = rotation * p + translation.
struct Superposition {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  bool reflected = false;
  double rmsd = 0.0;
};

/// Coordinates as an N x 3 matrix, one atom per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

inline Points to_points(const StateVector& x) {
  Points p(static_cast<Eigen::Index>(x.n_atoms()), 3);
  for (std::size_t i = 0; i < x.n_atoms(); ++i) p.row(static_cast<Eigen::Index>(i)) = x.atom(i).transpose();
  return p;
}

inline double rmsd_after(const Points& estimate, const Points& target, const Mat3& r, const Vec3& t) {
  const Points moved = (estimate * r.transpose()).rowwise() + t.transpose();
  return std::sqrt((moved - target).rowwise().squaredNorm().mean());
}

namespace detail {

inline void check_not_degenerate(const Points& centered) {
  Eigen::JacobiSVD<Points> svd(centered);
  const auto s = svd.singularValues();
  if (!(s[0] > 0) || s[1] <= 1e-9 * s[0]) {
    throw std::invalid_argument("superposition: rank-deficient point set");
  }
}

}  // namespace detail

/// Least-squares superposition (Kabsch). With allow_reflection both chirality
/// branches are tried and the lower RMSD is kept.
inline Superposition superpose_rmsd(const Points& estimate, const Points& target,
                                    bool allow_reflection) {
  if (estimate.rows() != target.rows()) throw std::invalid_argument("superposition: atom counts differ");
  if (estimate.rows() < 3) throw std::invalid_argument("superposition: need at least 3 atoms");
  const Vec3 ce = estimate.colwise().mean().transpose();
  const Vec3 ct = target.colwise().mean().transpose();
  const Points pe = estimate.rowwise() - ce.transpose();
  const Points pt = target.rowwise() - ct.transpose();
  detail::check_not_degenerate(pe);
  detail::check_not_degenerate(pt);

  const Mat3 h = pe.transpose() * pt;
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  const double d = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;

  auto branch = [&](double sign) {
    Mat3 fix = Mat3::Identity();
    fix(2, 2) = sign;
    Superposition s;
    s.rotation = v * fix * u.transpose();
    s.translation = ct - s.rotation * ce;
    s.reflected = s.rotation.determinant() < 0;
    s.rmsd = rmsd_after(estimate, target, s.rotation, s.translation);
    return s;
  };

  Superposition best = branch(d);
  if (allow_reflection) {
    Superposition mirrored = branch(-d);
    if (mirrored.rmsd < best.rmsd) best = mirrored;
  }
  return best;
}

inline Superposition superpose_rmsd(const StateVector& estimate, const StateVector& target,
                                    bool allow_reflection) {
  return superpose_rmsd(to_points(estimate), to_points(target), allow_reflection);
}

/// Entry (i, j) is the Frobenius norm of the 3x3 block C(x_i x_j).
inline Eigen::MatrixXd covariance_map(const CovarianceMatrix& c) {
  const auto n = static_cast<Eigen::Index>(c.n_atoms());
  Eigen::MatrixXd map(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      map(i, j) = c.entries().block<3, 3>(3 * i, 3 * j).norm();
    }
  }
  return map;
}

struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3::Zero();  // descending
  Mat3 axes = Mat3::Identity();   // column c is the direction of semi_axes[c]
};

/// Per-atom level surface at k_sd standard deviations of the 3D Gaussian.
inline std::vector<Ellipsoid> uncertainty_ellipsoids(const StateVector& x, const CovarianceMatrix& c,
                                                     double k_sd) {
  if (x.dim() != c.dim()) throw std::invalid_argument("state and covariance dimensions differ");
  std::vector<Ellipsoid> out;
  out.reserve(x.n_atoms());
  for (std::size_t i = 0; i < x.n_atoms(); ++i) {
    const Mat3 block = atom_block(c, i, i);
    Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (block + block.transpose()));
    const Vec3 ev = es.eigenvalues();  // ascending
    if (ev.minCoeff() < -1e-6) throw NumericalBreakdown("covariance block is not positive semidefinite");
    Ellipsoid e;
    e.center = x.atom(i);
    for (int a = 0; a < 3; ++a) {
      e.semi_axes[a] = k_sd * std::sqrt(std::max(ev[2 - a], 0.0));
      e.axes.col(a) = es.eigenvectors().col(2 - a);
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace dikf
