#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "covsteer/covsteer.hpp"

namespace {

using namespace covsteer;
using nlohmann::json;

constexpr const char* kVersion = "1.0.0";

enum ExitCode {
  kOk = 0,
  kFailure = 1,
  kInfeasible = 2,
  kIterationLimit = 3,
  kSizeCap = 4,
  kInputMismatch = 5,
};

int exit_for(SdpStatus s) {
  switch (s) {
    case SdpStatus::Optimal: return kOk;
    case SdpStatus::Infeasible: return kInfeasible;
    case SdpStatus::IterationLimit: return kIterationLimit;
    case SdpStatus::NumericalFailure: return kFailure;
  }
  return kFailure;
}

double env_double(const char* name, double fallback) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return fallback;
  char* end = nullptr;
  const double parsed = std::strtod(v, &end);
  if (end == v || *end != '\0' || !(parsed > 0.0)) {
    throw Error(std::string(name) + ": expected a positive number, got '" + v + "'");
  }
  return parsed;
}

SolverSettings settings_from_env() {
  SolverSettings st;
  st.feastol = env_double("COVSTEER_FEASTOL", st.feastol);
  st.abstol = env_double("COVSTEER_ABSTOL", st.abstol);
  st.reltol = env_double("COVSTEER_RELTOL", st.reltol);
  return st;
}

struct CommonOpts {
  std::string problem_path;
  std::string builtin;
  std::string chance = "auto";
  std::string out = ".";
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("problem", opts.problem_path,
                  "problem JSON file (alternative to --builtin)");
  cmd->add_option("--builtin", opts.builtin,
                  "builtin instance label, e.g. paper8nc or paper29");
  cmd->add_option("--chance", opts.chance,
                  "input-norm chance constraint: on, off, or auto (as defined)")
      ->check(CLI::IsMember({"on", "off", "auto"}));
  cmd->add_option("--out", opts.out, "output directory (default: .)");
}

/// Builtin labels follow example_problem's naming: paper<N> carries the
/// chance constraint, paper<N>nc drops it. --chance on/off overrides either.
ProblemInstance resolve_instance(const CommonOpts& opts, std::string& provenance) {
  if (!opts.builtin.empty() && !opts.problem_path.empty()) {
    throw Error("give either a problem file or --builtin, not both");
  }
  if (opts.builtin.empty() && opts.problem_path.empty()) {
    throw Error("no problem given: pass a problem JSON file or --builtin");
  }
  if (!opts.builtin.empty()) {
    static const std::regex pattern("^paper([0-9]+)(nc)?$");
    std::smatch m;
    if (!std::regex_match(opts.builtin, m, pattern)) {
      throw Error("unknown builtin '" + opts.builtin +
                  "' (expected paper<N> or paper<N>nc)");
    }
    const int horizon = std::stoi(m[1].str());
    bool with_chance = !m[2].matched;
    if (opts.chance == "on") with_chance = true;
    if (opts.chance == "off") with_chance = false;
    provenance = "builtin:" + opts.builtin;
    return example_problem(horizon, with_chance);
  }
  ProblemInstance inst = load_problem(opts.problem_path);
  if (opts.chance == "off") inst.chance.reset();
  if (opts.chance == "on" && !inst.chance) {
    throw Error("--chance on: problem file carries no chance parameters");
  }
  provenance = opts.problem_path;
  return inst;
}

json settings_json(const SolverSettings& st) {
  return json{{"feastol", st.feastol},
              {"abstol", st.abstol},
              {"reltol", st.reltol}};
}

json base_manifest(const std::string& command, const std::string& provenance,
                   const CommonOpts& opts, const SolverSettings& st) {
  json m;
  m["tool"] = "covsteer";
  m["version"] = kVersion;
  m["command"] = command;
  m["problem"] = provenance;
  m["chance"] = opts.chance;
  m["out"] = opts.out;
  m["tolerances"] = settings_json(st);
  return m;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

/// manifest.json is the only output that carries a timestamp; everything
/// else embeds the timeless manifest so reruns are byte-identical.
void write_outputs(const CommonOpts& opts, const json& manifest,
                   const std::vector<std::pair<std::string, std::string>>& files) {
  const std::filesystem::path dir(opts.out);
  std::filesystem::create_directories(dir);
  json stamped = manifest;
  stamped["timestamp"] = utc_now();
  write_text(dir / "manifest.json", stamped.dump(2) + "\n");
  for (const auto& [name, text] : files) write_text(dir / name, text);
}

std::string manifest_comment(const json& manifest) {
  return "# manifest " + manifest.dump() + "\n";
}

json matrices_json(const std::vector<Matrix>& ms) {
  json arr = json::array();
  for (const Matrix& m : ms) arr.push_back(detail::matrix_to_json(m));
  return arr;
}

json solution_json(const SdpSolution& sol, const FeedbackPolicy* policy,
                   const LosslessReport* lossless, double threshold) {
  json doc;
  doc["status"] = to_string(sol.status);
  doc["iterations"] = sol.iterations;
  doc["message"] = sol.message;
  doc["objective"] = sol.objective;
  doc["sigma"] = matrices_json(sol.Sigma);
  doc["u"] = matrices_json(sol.U);
  doc["y"] = matrices_json(sol.Y);
  if (sol.status == SdpStatus::Optimal && !sol.Y.empty()) {
    doc["j_tau"] = count_active(sol.Y, SparsityThreshold{threshold, false});
    doc["threshold"] = threshold;
  }
  if (policy != nullptr) doc["gains"] = matrices_json(policy->gains);
  if (lossless != nullptr) {
    doc["lossless"] = json{{"residuals", lossless->residuals},
                           {"max_residual", lossless->max_residual},
                           {"tol", lossless->tol},
                           {"pass", lossless->pass}};
  }
  return doc;
}

std::string csv_double(double v) { return format_double(v); }

/// Rows 0..N; the input-covariance and gain columns are empty on the
/// terminal row, which has neither.
std::string trajectory_csv(const json& manifest, const SdpSolution& sol,
                           const FeedbackPolicy& policy) {
  std::string csv = manifest_comment(manifest);
  const int n = sol.Sigma.empty() ? 0 : static_cast<int>(sol.Sigma[0].rows());
  csv += "k";
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      csv += ",sigma_" + std::to_string(r) + "_" + std::to_string(c);
  csv += ",y_norm,gain_norm\n";
  for (std::size_t k = 0; k < sol.Sigma.size(); ++k) {
    csv += std::to_string(k);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) csv += "," + csv_double(sol.Sigma[k](r, c));
    if (k < sol.Y.size()) {
      csv += "," + csv_double(sol.Y[k].norm());
      csv += "," + csv_double(policy.gains[k].norm());
    } else {
      csv += ",,";
    }
    csv += "\n";
  }
  return csv;
}

std::string trace_csv(const json& manifest, const IterationTrace& trace, int N) {
  std::string csv = manifest_comment(manifest);
  csv += "iteration,status,j_sigma,j_tau,max_residual";
  for (int k = 0; k < N; ++k) csv += ",lam_max_y_" + std::to_string(k);
  csv += "\n";
  for (const IterationRecord& rec : trace.records) {
    csv += std::to_string(rec.iteration);
    csv += ",";
    csv += to_string(rec.status);
    csv += "," + csv_double(rec.j_sigma);
    csv += "," + std::to_string(rec.j_tau);
    csv += "," + csv_double(rec.max_residual);
    for (double v : rec.y_lam_max) csv += "," + csv_double(v);
    csv += "\n";
  }
  return csv;
}

int cmd_solve(const CommonOpts& opts, double lossless_tol, double threshold) {
  std::string provenance;
  const ValidatedProblem problem =
      validate_or_throw(resolve_instance(opts, provenance));
  const SolverSettings st = settings_from_env();
  InteriorPointBackend backend(st);

  json manifest = base_manifest("solve", provenance, opts, st);
  manifest["config"] =
      json{{"lossless_tol", lossless_tol}, {"threshold", threshold}};

  SdpSolution sol = solve(build_standard(problem), backend);
  std::vector<std::pair<std::string, std::string>> files;
  if (sol.status == SdpStatus::Optimal) {
    const FeedbackPolicy policy = recover_gains(sol);
    const LosslessReport lossless = verify_lossless(sol, lossless_tol);
    json doc = solution_json(sol, &policy, &lossless, threshold);
    doc["manifest"] = manifest;
    files.emplace_back("solution.json", doc.dump(2) + "\n");
    files.emplace_back("trajectory.csv", trajectory_csv(manifest, sol, policy));
  } else {
    json doc = solution_json(sol, nullptr, nullptr, threshold);
    doc["manifest"] = manifest;
    files.emplace_back("solution.json", doc.dump(2) + "\n");
    std::fprintf(stderr, "solve: %s%s%s\n", to_string(sol.status),
                 sol.message.empty() ? "" : ": ",
                 sol.message.c_str());
  }
  write_outputs(opts, manifest, files);
  return exit_for(sol.status);
}

int cmd_irl1p(const CommonOpts& opts, const Irl1pConfig& config,
              double lossless_tol) {
  std::string provenance;
  const ValidatedProblem problem =
      validate_or_throw(resolve_instance(opts, provenance));
  const SolverSettings st = settings_from_env();
  InteriorPointBackend backend(st);

  json manifest = base_manifest("irl1p", provenance, opts, st);
  manifest["config"] = json{{"lambda", config.lambda},
                            {"epsilon", config.epsilon},
                            {"eps_conv", config.eps_conv},
                            {"l_max", config.l_max},
                            {"threshold", config.active_threshold},
                            {"lossless_tol", lossless_tol}};

  Irl1pResult res = run(problem, config, backend);

  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back("trace.csv",
                     trace_csv(manifest, res.trace, problem.horizon()));
  json doc;
  if (res.solution.status == SdpStatus::Optimal) {
    const LosslessReport lossless = verify_lossless(res.solution, lossless_tol);
    doc = solution_json(res.solution, &res.policy, &lossless,
                        config.active_threshold);
  } else {
    doc = solution_json(res.solution, nullptr, nullptr, config.active_threshold);
  }
  doc["manifest"] = manifest;
  doc["irl1p"] = json{{"termination", to_string(res.trace.termination)},
                      {"iterations", res.trace.records.size()},
                      {"failed_iteration", res.trace.failed_iteration},
                      {"message", res.trace.message}};
  files.emplace_back("solution.json", doc.dump(2) + "\n");
  write_outputs(opts, manifest, files);

  switch (res.trace.termination) {
    case Irl1pTermination::Converged: return kOk;
    case Irl1pTermination::IterationLimit: return kIterationLimit;
    case Irl1pTermination::SolverFailure:
      std::fprintf(stderr, "irl1p: %s\n", res.trace.message.c_str());
      return res.trace.failed_status == SdpStatus::Infeasible ? kInfeasible
                                                              : kFailure;
  }
  return kFailure;
}

int cmd_bruteforce(const CommonOpts& opts, double threshold, int jobs) {
  std::string provenance;
  const ValidatedProblem problem =
      validate_or_throw(resolve_instance(opts, provenance));
  const SolverSettings st = settings_from_env();
  InteriorPointBackend backend(st);

  json manifest = base_manifest("bruteforce", provenance, opts, st);
  manifest["config"] = json{{"threshold", threshold}, {"jobs", jobs}};

  BruteForceOptions bf;
  bf.workers = jobs;
  ParetoFront front =
      brute_force_pareto(problem, backend, SparsityThreshold{threshold, false}, bf);

  write_outputs(opts, manifest,
                {{"pareto.csv", manifest_comment(manifest) + pareto_csv(front)}});
  if (!front.points.empty()) return kOk;
  return front.infeasible_levels.empty() ? kFailure : kInfeasible;
}

/// "log:a:b:n" expands to n logarithmically spaced values from a to b
/// inclusive; otherwise the argument is a comma-separated list.
std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  if (text.rfind("log:", 0) == 0) {
    double a = 0.0, b = 0.0;
    int count = 0;
    if (std::sscanf(text.c_str(), "log:%lf:%lf:%d", &a, &b, &count) != 3 ||
        !(a > 0.0) || !(b > 0.0) || count < 1) {
      throw Error("--lambdas: expected log:<a>:<b>:<n> with a,b > 0 and n >= 1");
    }
    if (count == 1) {
      out.push_back(a);
      return out;
    }
    const double la = std::log10(a), lb = std::log10(b);
    for (int i = 0; i < count; ++i) {
      out.push_back(std::pow(10.0, la + (lb - la) * i / (count - 1)));
    }
    return out;
  }
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    if (item.empty()) throw Error("--lambdas: empty entry in list");
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end == item.c_str() || *end != '\0') {
      throw Error("--lambdas: cannot parse '" + item + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

int cmd_sweep(const CommonOpts& opts, const std::string& lambdas_text,
              Irl1pConfig config) {
  std::string provenance;
  const ValidatedProblem problem =
      validate_or_throw(resolve_instance(opts, provenance));
  const SolverSettings st = settings_from_env();
  InteriorPointBackend backend(st);
  const std::vector<double> lambdas = parse_lambdas(lambdas_text);

  json manifest = base_manifest("sweep", provenance, opts, st);
  manifest["config"] = json{{"lambdas", lambdas},
                            {"epsilon", config.epsilon},
                            {"eps_conv", config.eps_conv},
                            {"l_max", config.l_max},
                            {"threshold", config.active_threshold}};

  const std::vector<ParetoPoint> points =
      lambda_sweep(problem, lambdas, config, backend);
  write_outputs(opts, manifest,
                {{"sweep.csv", manifest_comment(manifest) + sweep_csv(points)}});
  for (const ParetoPoint& p : points) {
    if (p.feasible) return kOk;
  }
  return kFailure;
}

std::vector<Matrix> matrices_from_json(const json& arr, const std::string& field) {
  if (!arr.is_array()) throw ParseError(field + ": expected an array");
  std::vector<Matrix> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.push_back(detail::matrix_from_json(arr[i], field + "[" + std::to_string(i) + "]"));
  }
  return out;
}

int cmd_simulate(const CommonOpts& opts, const std::string& solution_path,
                 long long samples, std::uint64_t seed, int jobs) {
  std::string provenance;
  const ValidatedProblem problem =
      validate_or_throw(resolve_instance(opts, provenance));
  const SolverSettings st = settings_from_env();

  std::ifstream in(solution_path);
  if (!in) throw Error("cannot open '" + solution_path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(solution_path + ": " + e.what());
  }
  if (!doc.contains("gains")) {
    throw SchemaError(solution_path + ": no gains; simulate needs an Optimal solve");
  }
  FeedbackPolicy policy;
  policy.gains = matrices_from_json(doc["gains"], "gains");

  json manifest = base_manifest("simulate", provenance, opts, st);
  manifest["config"] = json{{"solution", solution_path},
                            {"samples", samples},
                            {"seed", seed},
                            {"jobs", jobs}};

  const MonteCarloReport report =
      simulate_monte_carlo(policy, problem, samples, seed, jobs);

  json out;
  out["manifest"] = manifest;
  out["samples"] = report.samples;
  out["seed"] = report.seed;
  if (problem.chance()) {
    out["u_max"] = problem.chance()->u_max;
    out["gamma"] = problem.chance()->gamma;
  }
  out["violation_rates"] = report.violation_rates;
  double worst = 0.0;
  for (double r : report.violation_rates) worst = std::max(worst, r);
  out["max_violation_rate"] = worst;
  out["terminal_covariance"] = detail::matrix_to_json(report.terminal_covariance);
  if (doc.contains("sigma") && doc["sigma"].is_array() && !doc["sigma"].empty()) {
    const Matrix solved =
        detail::matrix_from_json(doc["sigma"].back(), "sigma[last]");
    out["reference_terminal_covariance"] = detail::matrix_to_json(solved);
    out["terminal_rel_error_fro"] =
        (report.terminal_covariance - solved).norm() / solved.norm();
  }
  write_outputs(opts, manifest, {{"mc_report.json", out.dump(2) + "\n"}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hands-off covariance steering toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("covsteer ") + kVersion);

  CommonOpts solve_opts;
  double solve_lossless_tol = 1e-5, solve_threshold = 1e-6;
  CLI::App* solve_cmd = app.add_subcommand(
      "solve", "standard covariance steering as a single conic solve");
  add_common(solve_cmd, solve_opts);
  solve_cmd->add_option("--lossless-tol", solve_lossless_tol,
                        "gain-recovery residual tolerance");
  solve_cmd->add_option("--threshold", solve_threshold,
                        "activity cutoff for the reported stage count");

  CommonOpts irl1p_opts;
  Irl1pConfig irl1p_cfg;
  double irl1p_lossless_tol = 1e-5;
  CLI::App* irl1p_cmd = app.add_subcommand(
      "irl1p", "reweighted group-sparsity outer loop");
  add_common(irl1p_cmd, irl1p_opts);
  irl1p_cmd->add_option("--lambda", irl1p_cfg.lambda, "sparsity penalty weight")
      ->required();
  irl1p_cmd->add_option("--eps", irl1p_cfg.epsilon, "reweighting floor");
  irl1p_cmd->add_option("--eps-conv", irl1p_cfg.eps_conv,
                        "relative gain-change stop tolerance");
  irl1p_cmd->add_option("--lmax", irl1p_cfg.l_max, "outer iteration cap");
  irl1p_cmd->add_option("--threshold", irl1p_cfg.active_threshold,
                        "activity cutoff for the trace's stage count");
  irl1p_cmd->add_option("--lossless-tol", irl1p_lossless_tol,
                        "gain-recovery residual tolerance");

  CommonOpts bf_opts;
  double bf_threshold = 1e-6;
  int bf_jobs = 1;
  CLI::App* bf_cmd = app.add_subcommand(
      "bruteforce", "exhaustive stage-subset frontier");
  add_common(bf_cmd, bf_opts);
  bf_cmd->add_option("--threshold", bf_threshold, "activity cutoff");
  bf_cmd->add_option("--jobs", bf_jobs, "worker threads");

  CommonOpts sweep_opts;
  Irl1pConfig sweep_cfg;
  std::string sweep_lambdas;
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep", "trade-off curve over a list of penalty weights");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd
      ->add_option("--lambdas", sweep_lambdas,
                   "comma list (25,50,100) or log:<a>:<b>:<n>")
      ->required();
  sweep_cmd->add_option("--eps", sweep_cfg.epsilon, "reweighting floor");
  sweep_cmd->add_option("--eps-conv", sweep_cfg.eps_conv,
                        "relative gain-change stop tolerance");
  sweep_cmd->add_option("--lmax", sweep_cfg.l_max, "outer iteration cap");
  sweep_cmd->add_option("--threshold", sweep_cfg.active_threshold,
                        "activity cutoff");

  CommonOpts sim_opts;
  std::string sim_solution;
  long long sim_samples = 100000;
  std::uint64_t sim_seed = 1;
  int sim_jobs = 1;
  CLI::App* sim_cmd = app.add_subcommand(
      "simulate", "closed-loop Monte Carlo validation of a solved policy");
  add_common(sim_cmd, sim_opts);
  sim_cmd->add_option("--solution", sim_solution, "solution.json to validate")
      ->required();
  sim_cmd->add_option("--samples", sim_samples, "rollout count");
  sim_cmd->add_option("--seed", sim_seed, "stream seed");
  sim_cmd->add_option("--jobs", sim_jobs, "worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve_cmd->parsed()) {
      return cmd_solve(solve_opts, solve_lossless_tol, solve_threshold);
    }
    if (irl1p_cmd->parsed()) {
      return cmd_irl1p(irl1p_opts, irl1p_cfg, irl1p_lossless_tol);
    }
    if (bf_cmd->parsed()) return cmd_bruteforce(bf_opts, bf_threshold, bf_jobs);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts, sweep_lambdas, sweep_cfg);
    if (sim_cmd->parsed()) {
      return cmd_simulate(sim_opts, sim_solution, sim_samples, sim_seed, sim_jobs);
    }
  } catch (const HorizonTooLarge& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kSizeCap;
  } catch (const DimensionMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInputMismatch;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
