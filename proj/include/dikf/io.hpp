#pragma once

// File formats.
//
//   dataset   JSON, schema "dikf.dataset/1"
//   solution  JSON, schema "dikf.solution/1"
//   trace     CSV: cycle,avg_error,max_error,rmsd_to_target,wall_time,skipped
//   coords    plain text, one atom per line "x y z"; '#' starts a comment
//
// Reals in JSON use the shortest representation that round-trips exactly;
// CSV reals are written with 17 significant digits.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dikf/model.hpp"
#include "dikf/scheduler.hpp"
#include "dikf/synth.hpp"

namespace dikf::io {

using nlohmann::json;

inline constexpr const char* kDatasetSchema = "dikf.dataset/1";
inline constexpr const char* kSolutionSchema = "dikf.solution/1";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes to a sibling temporary and renames over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename into place: " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json coords_to_json(const StateVector& x) {
  json a = json::array();
  for (std::size_t i = 0; i < x.n_atoms(); ++i) {
    const Vec3 p = x.atom(i);
    a.push_back({p.x(), p.y(), p.z()});
  }
  return a;
}

inline StateVector coords_from_json(const json& a) {
  if (!a.is_array() || a.empty()) throw FormatError("coordinates must be a non-empty array");
  StateVector x = StateVector::zeros(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const json& p = a[i];
    if (!p.is_array() || p.size() != 3) throw FormatError("each coordinate must be [x, y, z]");
    x.set_atom(i, Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>()));
  }
  if (!x.is_finite()) throw FormatError("non-finite coordinate");
  return x;
}

inline json noise_to_json(const NoiseSpec& n) {
  return {{"model", std::string(to_string(n.model))}, {"param", n.param}, {"seed", n.seed}};
}

inline NoiseSpec noise_from_json(const json& j) {
  NoiseSpec n;
  n.model = parse_noise_model(j.at("model").get<std::string>());
  n.param = j.at("param").get<double>();
  n.seed = j.at("seed").get<std::uint64_t>();
  return n;
}

inline json constraint_to_json(const Constraint& c) {
  json atoms = json::array();
  for (std::size_t a : c.indices()) atoms.push_back(a);
  return {{"id", c.id}, {"kind", std::string(to_string(c.kind))}, {"atoms", atoms},
          {"measured", c.measured}, {"variance", c.variance}};
}

inline Constraint constraint_from_json(const json& j) {
  const auto atoms = j.at("atoms").get<std::vector<std::size_t>>();
  return Constraint::make(parse_constraint_kind(j.at("kind").get<std::string>()), atoms,
                          j.at("measured").get<double>(), j.at("variance").get<double>(),
                          j.at("id").get<std::int64_t>());
}

inline json dataset_to_json(const Dataset& d) {
  json cons = json::array();
  for (const Constraint& c : d.constraints) cons.push_back(constraint_to_json(c));
  return {{"schema", kDatasetSchema},
          {"n_atoms", d.n_atoms},
          {"fraction", d.fraction},
          {"seed", d.seed},
          {"noise", noise_to_json(d.noise)},
          {"target", d.target ? coords_to_json(*d.target) : json(nullptr)},
          {"constraints", cons}};
}

inline Dataset dataset_from_json(const json& j) {
  try {
    if (j.at("schema").get<std::string>() != kDatasetSchema) throw FormatError("not a dataset file (schema tag)");
    Dataset d;
    d.n_atoms = j.at("n_atoms").get<std::size_t>();
    d.fraction = j.at("fraction").get<double>();
    d.seed = j.at("seed").get<std::uint64_t>();
    d.noise = noise_from_json(j.at("noise"));
    if (j.contains("target") && !j.at("target").is_null()) d.target = coords_from_json(j.at("target"));
    for (const json& c : j.at("constraints")) d.constraints.push_back(constraint_from_json(c));
    d.validate();
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  atomic_write(path, dataset_to_json(d).dump(1) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  try {
    return dataset_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline json config_to_json(const SolveConfig& c) {
  return {{"ordering", std::string(to_string(c.ordering))},
          {"max_outer_cycles", c.max_outer_cycles},
          {"avg_stop", c.avg_stop},
          {"max_stop", c.max_stop},
          {"inner_tol", c.inner_tol},
          {"inner_max_iters", c.inner_max_iters},
          {"init_variance", c.init_variance},
          {"init_coord_range", {c.init_coord_range.first, c.init_coord_range.second}},
          {"seed", c.seed},
          {"stop_on_convergence", c.stop_on_convergence}};
}

inline SolveConfig config_from_json(const json& j) {
  SolveConfig c;
  c.ordering = parse_ordering(j.at("ordering").get<std::string>());
  c.max_outer_cycles = j.at("max_outer_cycles").get<int>();
  c.avg_stop = j.at("avg_stop").get<double>();
  c.max_stop = j.at("max_stop").get<double>();
  c.inner_tol = j.at("inner_tol").get<double>();
  c.inner_max_iters = j.at("inner_max_iters").get<int>();
  c.init_variance = j.at("init_variance").get<double>();
  c.init_coord_range = {j.at("init_coord_range").at(0).get<double>(), j.at("init_coord_range").at(1).get<double>()};
  c.seed = j.at("seed").get<std::uint64_t>();
  c.stop_on_convergence = j.value("stop_on_convergence", true);
  c.validate();
  return c;
}

/// What evaluate needs back from a solution file.
struct SolutionFile {
  StateVector state;
  CovarianceMatrix covariance;
  SolveConfig config;
  std::vector<std::pair<std::int64_t, double>> errors;
  bool converged = false;
  int cycles_run = 0;
  int best_cycle = 0;
  std::uint64_t dataset_seed = 0;
  std::size_t constraint_count = 0;
};

inline json solution_to_json(const Solution& s, const SolveConfig& cfg, const Dataset& d) {
  const std::size_t n = s.state.n_atoms();
  json blocks = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const Mat3 b = atom_block(s.covariance, i, i);
    json rows = json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({b(r, 0), b(r, 1), b(r, 2)});
    blocks.push_back(rows);
  }
  json cov = json::array();
  const Eigen::MatrixXd& m = s.covariance.entries();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    cov.push_back(std::move(row));
  }
  json errs = json::array();
  for (const auto& [id, e] : s.per_constraint_errors) {
    errs.push_back({{"id", id}, {"error", std::isfinite(e) ? json(e) : json(nullptr)}});
  }
  return {{"schema", kSolutionSchema},
          {"n_atoms", n},
          {"converged", s.converged},
          {"cycles_run", s.cycles_run},
          {"best_cycle", s.best_cycle},
          {"config", config_to_json(cfg)},
          {"dataset", {{"seed", d.seed}, {"fraction", d.fraction}, {"noise", noise_to_json(d.noise)},
                       {"constraint_count", d.constraints.size()}}},
          {"coordinates", coords_to_json(s.state)},
          {"atom_covariances", blocks},
          {"covariance", cov},
          {"constraint_errors", errs}};
}

inline SolutionFile solution_from_json(const json& j) {
  try {
    if (j.at("schema").get<std::string>() != kSolutionSchema) throw FormatError("not a solution file (schema tag)");
    SolutionFile f;
    f.state = coords_from_json(j.at("coordinates"));
    const auto n = static_cast<Eigen::Index>(3 * f.state.n_atoms());
    const json& cov = j.at("covariance");
    if (!cov.is_array() || static_cast<Eigen::Index>(cov.size()) != n) throw FormatError("covariance dimension mismatch");
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const json& row = cov[static_cast<std::size_t>(r)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) throw FormatError("covariance row mismatch");
      for (Eigen::Index c = 0; c < n; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    f.covariance = CovarianceMatrix(std::move(m));
    f.config = config_from_json(j.at("config"));
    for (const json& e : j.at("constraint_errors")) {
      f.errors.emplace_back(e.at("id").get<std::int64_t>(),
                            e.at("error").is_null() ? std::numeric_limits<double>::infinity()
                                                    : e.at("error").get<double>());
    }
    f.converged = j.at("converged").get<bool>();
    f.cycles_run = j.at("cycles_run").get<int>();
    f.best_cycle = j.at("best_cycle").get<int>();
    f.dataset_seed = j.at("dataset").at("seed").get<std::uint64_t>();
    f.constraint_count = j.at("dataset").at("constraint_count").get<std::size_t>();
    return f;
  } catch (const json::exception& e) {
    throw FormatError(std::string("solution: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("solution: ") + e.what());
  }
}

inline void save_solution(const std::filesystem::path& path, const Solution& s, const SolveConfig& cfg,
                          const Dataset& d) {
  atomic_write(path, solution_to_json(s, cfg, d).dump(1) + "\n");
}

inline SolutionFile load_solution(const std::filesystem::path& path) {
  try {
    return solution_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::string trace_csv(const std::vector<CycleReport>& trace) {
  std::string out = "cycle,avg_error,max_error,rmsd_to_target,wall_time,skipped\n";
  for (const CycleReport& r : trace) {
    out += std::to_string(r.cycle) + "," + format_real(r.avg_error) + "," + format_real(r.max_error) + "," +
           (r.rmsd_to_target ? format_real(*r.rmsd_to_target) : std::string()) + "," + format_real(r.wall_time) +
           "," + std::to_string(r.skipped) + "\n";
  }
  return out;
}

/// Plain "x y z" rows. Blank lines and '#' comments are ignored.
inline StateVector parse_coordinates(const std::string& text) {
  std::vector<Vec3> pts;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    double a, b, c;
    if (!(ls >> a >> b >> c)) throw FormatError("coordinates line " + std::to_string(lineno) + ": expected x y z");
    std::string extra;
    if (ls >> extra) throw FormatError("coordinates line " + std::to_string(lineno) + ": trailing fields");
    pts.emplace_back(a, b, c);
  }
  if (pts.empty()) throw FormatError("coordinates: no atoms");
  StateVector x = StateVector::zeros(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) x.set_atom(i, pts[i]);
  if (!x.is_finite()) throw FormatError("coordinates: non-finite value");
  return x;
}

inline StateVector load_coordinates(const std::filesystem::path& path) { return parse_coordinates(read_file(path)); }

inline std::string coordinates_text(const StateVector& x) {
  std::string out;
  for (std::size_t i = 0; i < x.n_atoms(); ++i) {
    const Vec3 p = x.atom(i);
    out += format_real(p.x()) + " " + format_real(p.y()) + " " + format_real(p.z()) + "\n";
  }
  return out;
}

}  // namespace dikf::io
