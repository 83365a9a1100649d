// dikf: generate datasets, solve them, evaluate solutions, reproduce the
// preset experiments.
//
// Exit codes: 0 success, 1 reproduce acceptance failure, 2 usage / input /
// I/O error, 3 numerical breakdown.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dikf/dikf.hpp"

namespace fs = std::filesystem;
using namespace dikf;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitInput = 2;
constexpr int kExitBreakdown = 3;

fs::path output_path(const std::string& given, const char* default_name) {
  if (!given.empty()) return given;
  const char* dir = std::getenv("DIKF_OUTPUT_DIR");
  fs::path base = (dir && *dir) ? fs::path(dir) : fs::current_path();
  fs::create_directories(base);
  return base / default_name;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  fs::path s = p;
  s.replace_extension();
  s += suffix;
  return s;
}

struct GenerateArgs {
  std::string preset;
  std::optional<std::size_t> atoms;
  std::optional<double> fraction;
  std::string noise;
  std::optional<double> noise_param;
  std::uint64_t seed = 1;
  std::string target;
  std::string output;
};

int cmd_generate(const GenerateArgs& a) {
  experiment::ExperimentConfig e = a.preset.empty() ? experiment::ExperimentConfig{} : experiment::preset(a.preset);
  if (a.atoms) e.n_atoms = *a.atoms;
  if (a.fraction) e.fraction = *a.fraction;
  if (!a.noise.empty()) {
    e.noise = parse_noise_model(a.noise);
    if (!a.noise_param) {
      e.noise_param = e.noise == NoiseModel::exact ? kExactVariance
                      : e.noise == NoiseModel::uniform_variance_gaussian ? 6.0
                                                                         : 3.0;
    }
  }
  if (a.noise_param) e.noise_param = *a.noise_param;

  Dataset d;
  if (!a.target.empty()) {
    // User-supplied structure in place of the generated chain.
    const StateVector target = io::load_coordinates(a.target);
    d.n_atoms = target.n_atoms();
    d.target = target;
    d.fraction = e.fraction;
    d.seed = a.seed;
    d.noise = experiment::noise_for(e, a.seed);
    auto all = enumerate_distances(target);
    auto subset = e.fraction < 1.0 ? sample_fraction(all, e.fraction, derive_seed(a.seed, 1)) : std::move(all);
    d.constraints = apply_noise(std::move(subset), d.noise);
    d.validate();
  } else {
    d = experiment::dataset_for(e, a.seed);
  }
  const fs::path out = output_path(a.output, "dataset.json");
  io::save_dataset(out, d);
  std::cout << "wrote " << out.string() << ": " << d.n_atoms << " atoms, " << d.constraints.size()
            << " constraints\n";
  return 0;
}

struct SolveArgs {
  std::string dataset;
  std::string preset;
  std::string order;
  std::optional<int> max_cycles;
  std::optional<double> avg_tol, max_tol, inner_tol, init_variance;
  std::optional<int> inner_iters;
  std::optional<std::uint64_t> seed;
  std::string target;
  bool all_cycles = false;
  std::string output;
  std::string trace;
};

int cmd_solve(const SolveArgs& a) {
  const Dataset d = io::load_dataset(a.dataset);
  SolveConfig cfg = a.preset.empty() ? SolveConfig{} : experiment::preset(a.preset).solve;
  cfg.seed = derive_seed(d.seed, 7);
  if (!a.order.empty()) cfg.ordering = parse_ordering(a.order);
  if (a.max_cycles) cfg.max_outer_cycles = *a.max_cycles;
  if (a.avg_tol) cfg.avg_stop = *a.avg_tol;
  if (a.max_tol) cfg.max_stop = *a.max_tol;
  if (a.inner_tol) cfg.inner_tol = *a.inner_tol;
  if (a.inner_iters) cfg.inner_max_iters = *a.inner_iters;
  if (a.init_variance) cfg.init_variance = *a.init_variance;
  if (a.seed) cfg.seed = *a.seed;
  cfg.stop_on_convergence = !a.all_cycles;
  cfg.validate();

  SolveOptions opts;
  opts.target = a.target.empty() ? d.target : std::optional<StateVector>(io::load_coordinates(a.target));

  const fs::path out = output_path(a.output, "solution.json");
  const fs::path trace_path = a.trace.empty() ? sibling(out, ".trace.csv") : fs::path(a.trace);
  try {
    const Solution s = solve(d, cfg, opts);
    io::save_solution(out, s, cfg, d);
    io::atomic_write(trace_path, io::trace_csv(s.trace));
    const CycleReport& best = s.trace.at(static_cast<std::size_t>(s.best_cycle - 1));
    std::cout << (s.converged ? "converged" : "not converged") << " after " << s.cycles_run
              << " cycles; best cycle " << s.best_cycle << " avg " << best.avg_error << " SD, max "
              << best.max_error << " SD";
    if (best.rmsd_to_target) std::cout << ", rmsd " << *best.rmsd_to_target << " A";
    std::cout << "\nwrote " << out.string() << " and " << trace_path.string() << "\n";
  } catch (const SolveBreakdown& e) {
    io::atomic_write(trace_path, io::trace_csv(e.trace));
    std::cerr << "numerical breakdown: " << e.what() << "\npartial trace in " << trace_path.string() << "\n";
    return kExitBreakdown;
  }
  return 0;
}

struct EvaluateArgs {
  std::string solution;
  std::string dataset;
  std::string target;
  double bin_width = kDefaultBinWidth;
  double k_sd = 2.0;
  std::string output;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const io::SolutionFile sol = io::load_solution(a.solution);
  const Dataset d = io::load_dataset(a.dataset);
  if (sol.state.n_atoms() != d.n_atoms || sol.constraint_count != d.constraints.size() ||
      sol.dataset_seed != d.seed) {
    std::cerr << "solution and dataset do not match (atoms, constraint count or seed)\n";
    return kExitInput;
  }
  std::optional<StateVector> target = a.target.empty() ? d.target : io::load_coordinates(a.target);
  if (target && target->n_atoms() != d.n_atoms) {
    std::cerr << "target atom count does not match dataset\n";
    return kExitInput;
  }

  const ErrorStats st = error_stats(d.constraints, sol.state, a.bin_width);
  const Eigen::MatrixXd map = covariance_map(sol.covariance);
  const auto ells = uncertainty_ellipsoids(sol.state, sol.covariance, a.k_sd);

  io::json report;
  report["schema"] = "dikf.report/1";
  report["errors"] = {{"avg", st.avg}, {"max", st.max}, {"evaluated", st.evaluated}, {"skipped", st.skipped},
                      {"bin_width", a.bin_width}};
  io::json hist = io::json::array();
  for (const auto& [edge, count] : st.histogram) hist.push_back({{"lower", edge}, {"count", count}});
  report["errors"]["histogram"] = hist;
  if (target && d.n_atoms >= 3) {
    const bool allow_reflection = !d.has_dihedrals();
    const Superposition sp = superpose_rmsd(sol.state, *target, allow_reflection);
    io::json rot = io::json::array();
    for (int r = 0; r < 3; ++r) rot.push_back({sp.rotation(r, 0), sp.rotation(r, 1), sp.rotation(r, 2)});
    report["superposition"] = {{"rmsd", sp.rmsd},
                               {"reflected", sp.reflected},
                               {"allow_reflection", allow_reflection},
                               {"rotation", rot},
                               {"translation", {sp.translation.x(), sp.translation.y(), sp.translation.z()}}};
  } else {
    report["superposition"] = nullptr;
  }
  report["provenance"] = {{"solution", a.solution}, {"dataset", a.dataset}, {"dataset_seed", d.seed},
                          {"solver_seed", sol.config.seed}, {"k_sd", a.k_sd}};

  const fs::path out = output_path(a.output, "report.json");
  std::string hist_csv = "bin_lower_sd,count\n";
  for (const auto& [edge, count] : st.histogram) hist_csv += io::format_real(edge) + "," + std::to_string(count) + "\n";
  std::string map_csv = "i,j,norm\n";
  for (Eigen::Index i = 0; i < map.rows(); ++i) {
    for (Eigen::Index j = 0; j < map.cols(); ++j) {
      map_csv += std::to_string(i) + "," + std::to_string(j) + "," + io::format_real(map(i, j)) + "\n";
    }
  }
  std::string ell_csv = "atom,cx,cy,cz,a1,a2,a3,u1x,u1y,u1z,u2x,u2y,u2z,u3x,u3y,u3z\n";
  for (std::size_t i = 0; i < ells.size(); ++i) {
    const Ellipsoid& e = ells[i];
    ell_csv += std::to_string(i);
    for (int k = 0; k < 3; ++k) ell_csv += "," + io::format_real(e.center[k]);
    for (int k = 0; k < 3; ++k) ell_csv += "," + io::format_real(e.semi_axes[k]);
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 3; ++k) ell_csv += "," + io::format_real(e.axes(k, c));
    }
    ell_csv += "\n";
  }
  report["tables"] = {{"histogram", sibling(out, ".histogram.csv").string()},
                      {"covariance_map", sibling(out, ".covmap.csv").string()},
                      {"ellipsoids", sibling(out, ".ellipsoids.csv").string()}};
  io::atomic_write(sibling(out, ".histogram.csv"), hist_csv);
  io::atomic_write(sibling(out, ".covmap.csv"), map_csv);
  io::atomic_write(sibling(out, ".ellipsoids.csv"), ell_csv);
  io::atomic_write(out, report.dump(1) + "\n");

  std::cout << "avg " << st.avg << " SD, max " << st.max << " SD over " << st.evaluated << " constraints";
  if (!report["superposition"].is_null()) std::cout << "; rmsd " << report["superposition"]["rmsd"].get<double>() << " A";
  std::cout << "\nwrote " << out.string() << "\n";
  return 0;
}

struct ReproduceArgs {
  std::vector<std::string> presets;
  std::vector<std::uint64_t> seeds;
  std::optional<int> max_cycles;
  std::string output;
  std::string detail;
};

int cmd_reproduce(const ReproduceArgs& a) {
  const std::vector<std::string> names = a.presets.empty() ? experiment::preset_names() : a.presets;
  std::vector<experiment::PresetResult> results;
  for (const std::string& n : names) {
    experiment::ExperimentConfig e = experiment::preset(n);
    if (!a.seeds.empty()) e.seeds = a.seeds;
    if (a.max_cycles) e.solve.max_outer_cycles = *a.max_cycles;
    std::cerr << "running " << n << " over " << e.seeds.size() << " seeds\n";
    results.push_back(experiment::run_preset(e));
  }
  const std::string summary = experiment::summary_csv(results);
  const fs::path out = output_path(a.output, "summary.csv");
  io::atomic_write(out, summary);
  const fs::path detail = a.detail.empty() ? sibling(out, ".detail.csv") : fs::path(a.detail);
  io::atomic_write(detail, experiment::detail_csv(results));
  std::cout << summary;
  return experiment::all_pass(results) ? 0 : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Double iterated Kalman filter: 3D coordinates and covariance from noisy geometric constraints"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic distance dataset");
  gen->add_option("--preset", ga.preset, "Preset experiment (test1, test2a, ...)")
      ->check(CLI::IsMember(experiment::preset_names()));
  gen->add_option("--atoms", ga.atoms, "Number of atoms")->check(CLI::Range(2, 100000));
  gen->add_option("--fraction", ga.fraction, "Fraction of all pairwise distances");
  gen->add_option("--noise", ga.noise, "Noise model")->check(CLI::IsMember({"exact", "gaussian", "bias"}));
  gen->add_option("--noise-param", ga.noise_param, "v_fixed (exact), v_max (gaussian) or mean shift (bias)");
  gen->add_option("--seed", ga.seed, "Replicate seed");
  gen->add_option("--target", ga.target, "Use this coordinates file as the target structure")
      ->check(CLI::ExistingFile);
  gen->add_option("-o,--output", ga.output, "Dataset file");

  SolveArgs sa;
  auto* sol = app.add_subcommand("solve", "Run the filter on a dataset");
  sol->add_option("dataset", sa.dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  sol->add_option("--preset", sa.preset, "Take solver settings from a preset")
      ->check(CLI::IsMember(experiment::preset_names()));
  sol->add_option("--order", sa.order, "Constraint ordering")->check(CLI::IsMember({"sorted", "random", "fixed"}));
  sol->add_option("--max-cycles", sa.max_cycles, "Maximum outer cycles")->check(CLI::PositiveNumber);
  sol->add_option("--avg-tol", sa.avg_tol, "Stop when average |error| <= this (SD)")->check(CLI::PositiveNumber);
  sol->add_option("--max-tol", sa.max_tol, "Stop when maximum |error| <= this (SD)")->check(CLI::PositiveNumber);
  sol->add_option("--inner-tol", sa.inner_tol, "Inner iteration tolerance (A)")->check(CLI::PositiveNumber);
  sol->add_option("--inner-iters", sa.inner_iters, "Maximum inner iterations")->check(CLI::PositiveNumber);
  sol->add_option("--init-variance", sa.init_variance, "Initial coordinate variance (A^2)")
      ->check(CLI::PositiveNumber);
  sol->add_option("--seed", sa.seed, "Solver seed (default derived from the dataset seed)");
  sol->add_option("--target", sa.target, "Reference coordinates for per-cycle RMSD")->check(CLI::ExistingFile);
  sol->add_flag("--all-cycles", sa.all_cycles, "Ignore the stop test and run every cycle");
  sol->add_option("-o,--output", sa.output, "Solution file");
  sol->add_option("--trace", sa.trace, "Cycle trace CSV (default: <output>.trace.csv)");

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Error statistics, RMSD, covariance map and ellipsoids");
  ev->add_option("--solution", ea.solution, "Solution file")->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", ea.dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("--target", ea.target, "Reference coordinates (default: dataset target)")->check(CLI::ExistingFile);
  ev->add_option("--bin-width", ea.bin_width, "Histogram bin width (SD)")->check(CLI::PositiveNumber);
  ev->add_option("--k-sd", ea.k_sd, "Ellipsoid size in standard deviations")->check(CLI::PositiveNumber);
  ev->add_option("-o,--output", ea.output, "Report file");

  ReproduceArgs ra;
  auto* rep = app.add_subcommand("reproduce", "Run preset experiments and summarize pass/fail");
  rep->add_option("--preset", ra.presets, "Presets to run (default: all)")
      ->check(CLI::IsMember(experiment::preset_names()));
  rep->add_option("--seed", ra.seeds, "Replicate seeds (default: 1 2 3 4 5)");
  rep->add_option("--max-cycles", ra.max_cycles, "Override the cycle budget")->check(CLI::PositiveNumber);
  rep->add_option("-o,--output", ra.output, "Summary CSV");
  rep->add_option("--detail", ra.detail, "Per-replicate CSV (default: <output>.detail.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(ga);
    if (sol->parsed()) return cmd_solve(sa);
    if (ev->parsed()) return cmd_evaluate(ea);
    if (rep->parsed()) return cmd_reproduce(ra);
  } catch (const NumericalBreakdown& e) {
    std::cerr << "numerical breakdown: " << e.what() << "\n";
    return kExitBreakdown;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
