#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "covsteer/irl1p.hpp"

namespace covsteer {

struct InvalidThreshold : Error {
  InvalidThreshold() : Error("activity threshold must be > 0") {}
};

struct HorizonTooLarge : Error {
  HorizonTooLarge(int horizon, int cap)
      : Error("exhaustive enumeration over 2^" + std::to_string(horizon) +
              " stage subsets refused, cap is N = " + std::to_string(cap)),
        horizon(horizon), cap(cap) {}
  int horizon;
  int cap;
};

/// Cutoff deciding which stages count as acting. Absolute by default; the
/// relative mode scales the cutoff by the largest ||Y_k||_F in the profile,
/// which tracks solver noise floors that grow with the problem's magnitude.
struct SparsityThreshold {
  double value = 1e-6;
  bool relative = false;

  void validate() const {
    if (!(value > 0.0)) throw InvalidThreshold();
  }
};

/// Number of stages whose input covariance is nonzero beyond the cutoff.
inline int count_active(const std::vector<Matrix>& Y,
                        SparsityThreshold threshold = {}) {
  threshold.validate();
  double cut = threshold.value;
  if (threshold.relative) {
    double top = 0.0;
    for (const Matrix& y : Y) top = std::max(top, y.norm());
    cut *= top;
  }
  int active = 0;
  for (const Matrix& y : Y) {
    if (y.norm() > cut) ++active;
  }
  return active;
}

inline int count_active(const SdpSolution& sol, SparsityThreshold threshold = {}) {
  return count_active(sol.Y, threshold);
}

/// Mask bit k is true when stage k is allowed to act; the complement is what
/// the masked program pins to zero.
struct BruteForceProvenance {
  std::vector<bool> active;
};

struct Irl1pProvenance {
  double lambda = 0.0;
  int iterations = 0;
  Irl1pTermination termination = Irl1pTermination::IterationLimit;
};

using Provenance = std::variant<BruteForceProvenance, Irl1pProvenance>;

/// One (transient cost, active-stage count) trade-off point. `feasible` is
/// false only for sweep entries whose run produced no usable iterate at all;
/// those carry a NaN cost and never survive pareto_filter.
struct ParetoPoint {
  double j_sigma = std::numeric_limits<double>::quiet_NaN();
  int j_tau = 0;
  bool feasible = true;
  Provenance provenance;
};

/// Trade-off frontier: points sorted by ascending j_tau, at most one per
/// level, with j_sigma strictly decreasing as j_tau grows. Levels where every
/// stage subset is certified infeasible are listed separately, as are counts
/// of solves that failed numerically (those prove nothing about feasibility).
struct ParetoFront {
  std::vector<ParetoPoint> points;
  std::vector<int> infeasible_levels;
  std::map<int, int> numerical_failures;

  const ParetoPoint* at_level(int j_tau) const {
    for (const ParetoPoint& p : points) {
      if (p.j_tau == j_tau) return &p;
    }
    return nullptr;
  }
};

/// Keeps the points not dominated under componentwise (j_sigma, j_tau)
/// minimization. Exact ties keep the earliest input point, which makes the
/// filter idempotent. Non-finite or infeasible entries are dropped.
inline ParetoFront pareto_filter(const std::vector<ParetoPoint>& in) {
  ParetoFront front;
  const std::size_t n = in.size();
  for (std::size_t ip = 0; ip < n; ++ip) {
    const ParetoPoint& p = in[ip];
    if (!p.feasible || !std::isfinite(p.j_sigma)) continue;
    bool dominated = false;
    for (std::size_t iq = 0; iq < n && !dominated; ++iq) {
      if (iq == ip) continue;
      const ParetoPoint& q = in[iq];
      if (!q.feasible || !std::isfinite(q.j_sigma)) continue;
      if (q.j_sigma <= p.j_sigma && q.j_tau <= p.j_tau &&
          (q.j_sigma < p.j_sigma || q.j_tau < p.j_tau || iq < ip)) {
        dominated = true;
      }
    }
    if (!dominated) front.points.push_back(p);
  }
  std::sort(front.points.begin(), front.points.end(),
            [](const ParetoPoint& a, const ParetoPoint& b) {
              return a.j_tau < b.j_tau;
            });
  return front;
}

struct BruteForceOptions {
  int horizon_cap = 16;
  int workers = 1;
};

namespace sparsity_detail {

struct LevelBest {
  double objective = std::numeric_limits<double>::infinity();
  std::uint64_t order = std::numeric_limits<std::uint64_t>::max();
  std::vector<bool> active;
  int optimal = 0;
  int infeasible = 0;
  int failed = 0;
};

/// Better objective wins; exact ties resolve by enumeration order so the
/// result is independent of how masks were split across workers.
inline void merge_level(LevelBest& into, const LevelBest& from) {
  into.optimal += from.optimal;
  into.infeasible += from.infeasible;
  into.failed += from.failed;
  if (from.objective < into.objective ||
      (from.objective == into.objective && from.order < into.order)) {
    into.objective = from.objective;
    into.order = from.order;
    into.active = from.active;
  }
}

inline void solve_mask_range(const ValidatedProblem& problem,
                             SolverBackend& backend, std::uint64_t begin,
                             std::uint64_t end, std::vector<LevelBest>& levels) {
  const int N = problem.horizon();
  std::vector<bool> mask(static_cast<std::size_t>(N));
  for (std::uint64_t i = begin; i < end; ++i) {
    const std::uint64_t g = i ^ (i >> 1);
    const int level = std::popcount(g);
    for (int k = 0; k < N; ++k) {
      mask[static_cast<std::size_t>(k)] = ((g >> k) & 1u) == 0;
    }
    ConicProgram prog = build_masked(problem, mask);
    SdpSolution sol = solve(prog, backend);
    LevelBest& lb = levels[static_cast<std::size_t>(level)];
    switch (sol.status) {
      case SdpStatus::Optimal: {
        ++lb.optimal;
        if (sol.objective < lb.objective ||
            (sol.objective == lb.objective && i < lb.order)) {
          lb.objective = sol.objective;
          lb.order = i;
          lb.active.assign(static_cast<std::size_t>(N), false);
          for (int k = 0; k < N; ++k) {
            lb.active[static_cast<std::size_t>(k)] = ((g >> k) & 1u) != 0;
          }
        }
        break;
      }
      case SdpStatus::Infeasible:
        ++lb.infeasible;
        break;
      default:
        ++lb.failed;
        break;
    }
  }
}

inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t r = 1;
  for (int j = 1; j <= k; ++j) {
    r = r * static_cast<std::uint64_t>(n - k + j) / static_cast<std::uint64_t>(j);
  }
  return r;
}

}  // namespace sparsity_detail

/// Exhaustive frontier: one masked solve per stage subset, minimal objective
/// kept per activity level, then the dominance filter. A level is declared
/// infeasible only when every one of its subsets is certified infeasible.
inline ParetoFront brute_force_pareto(const ValidatedProblem& problem,
                                      SolverBackend& backend,
                                      SparsityThreshold threshold = {},
                                      BruteForceOptions options = {}) {
  using sparsity_detail::LevelBest;
  threshold.validate();
  const int N = problem.horizon();
  if (options.horizon_cap < 1) {
    throw InvalidConfig("brute force horizon cap must be at least 1");
  }
  if (N > options.horizon_cap) throw HorizonTooLarge(N, options.horizon_cap);

  const std::uint64_t total = std::uint64_t{1} << N;
  std::vector<LevelBest> levels(static_cast<std::size_t>(N) + 1);

  int workers = std::max(1, options.workers);
  workers = static_cast<int>(
      std::min<std::uint64_t>(static_cast<std::uint64_t>(workers), total));
  std::vector<std::unique_ptr<SolverBackend>> clones;
  if (workers > 1) {
    for (int w = 0; w < workers; ++w) {
      std::unique_ptr<SolverBackend> c = backend.clone();
      if (!c) break;
      clones.push_back(std::move(c));
    }
    if (static_cast<int>(clones.size()) < workers) workers = 1;
  }

  if (workers == 1) {
    sparsity_detail::solve_mask_range(problem, backend, 0, total, levels);
  } else {
    std::vector<std::vector<LevelBest>> partials(
        static_cast<std::size_t>(workers),
        std::vector<LevelBest>(static_cast<std::size_t>(N) + 1));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      const std::uint64_t begin = total * static_cast<std::uint64_t>(w) /
                                  static_cast<std::uint64_t>(workers);
      const std::uint64_t end = total * static_cast<std::uint64_t>(w + 1) /
                                static_cast<std::uint64_t>(workers);
      pool.emplace_back([&, w, begin, end]() {
        try {
          sparsity_detail::solve_mask_range(problem, *clones[static_cast<std::size_t>(w)],
                                            begin, end,
                                            partials[static_cast<std::size_t>(w)]);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (int w = 0; w < workers; ++w) {
      for (std::size_t level = 0; level <= static_cast<std::size_t>(N); ++level) {
        sparsity_detail::merge_level(levels[level],
                                     partials[static_cast<std::size_t>(w)][level]);
      }
    }
  }

  std::vector<ParetoPoint> raw;
  std::vector<int> infeasible_levels;
  std::map<int, int> failures;
  for (int level = 0; level <= N; ++level) {
    const LevelBest& lb = levels[static_cast<std::size_t>(level)];
    const std::uint64_t count = sparsity_detail::binomial(N, level);
    if (lb.optimal > 0) {
      ParetoPoint p;
      p.j_sigma = lb.objective;
      p.j_tau = level;
      p.feasible = true;
      p.provenance = BruteForceProvenance{lb.active};
      raw.push_back(std::move(p));
    } else if (static_cast<std::uint64_t>(lb.infeasible) == count) {
      infeasible_levels.push_back(level);
    }
    if (lb.failed > 0) failures[level] = lb.failed;
  }

  ParetoFront front = pareto_filter(raw);
  front.infeasible_levels = std::move(infeasible_levels);
  front.numerical_failures = std::move(failures);
  return front;
}

/// One terminal trade-off point per lambda, in the given order. A run that
/// fails before producing any Optimal iterate yields an infeasible-flagged
/// placeholder; later failures keep the last usable iterate's numbers. The
/// sweep always continues to the next lambda.
inline std::vector<ParetoPoint> lambda_sweep(const ValidatedProblem& problem,
                                             const std::vector<double>& lambdas,
                                             Irl1pConfig config,
                                             SolverBackend& backend) {
  if (lambdas.empty()) throw InvalidConfig("lambda sweep needs at least one value");
  for (double lam : lambdas) {
    if (lam < 0.0) throw NegativeLambda();
  }
  std::vector<ParetoPoint> out;
  out.reserve(lambdas.size());
  for (double lam : lambdas) {
    config.lambda = lam;
    Irl1pResult res = run(problem, config, backend);
    ParetoPoint p;
    Irl1pProvenance prov;
    prov.lambda = lam;
    prov.termination = res.trace.termination;
    if (!res.trace.records.empty()) {
      const IterationRecord& last = res.trace.records.back();
      prov.iterations = last.iteration;
      p.j_sigma = last.j_sigma;
      p.j_tau = last.j_tau;
      p.feasible = true;
    } else {
      prov.iterations = 0;
      p.feasible = false;
    }
    p.provenance = std::move(prov);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string mask_bitstring(const std::vector<bool>& active) {
  std::string s(active.size(), '0');
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (active[k]) s[k] = '1';
  }
  return s;
}

namespace sparsity_detail {

inline void append_point_row(std::string& csv, const ParetoPoint& p) {
  char buf[64];
  csv += std::to_string(p.j_tau);
  csv += ',';
  std::snprintf(buf, sizeof buf, "%.17g", p.j_sigma);
  csv += buf;
  csv += ',';
  if (const auto* bf = std::get_if<BruteForceProvenance>(&p.provenance)) {
    csv += "bruteforce,";
    csv += mask_bitstring(bf->active);
  } else {
    const auto& ir = std::get<Irl1pProvenance>(p.provenance);
    csv += "irl1p,";
    std::snprintf(buf, sizeof buf, "%.17g", ir.lambda);
    csv += buf;
  }
  csv += p.feasible ? ",1\n" : ",0\n";
}

}  // namespace sparsity_detail

/// Rows: j_tau, j_sigma, provenance kind, mask bitstring (bit k = 1 when
/// stage k may act) or lambda, feasible flag. Infeasible levels appear with
/// an infinite cost and an empty detail column.
inline std::string pareto_csv(const ParetoFront& front) {
  std::string csv = "j_tau,j_sigma,provenance,detail,feasible\n";
  for (const ParetoPoint& p : front.points) {
    sparsity_detail::append_point_row(csv, p);
  }
  for (int level : front.infeasible_levels) {
    csv += std::to_string(level);
    csv += ",inf,bruteforce,,0\n";
  }
  return csv;
}

inline std::string sweep_csv(const std::vector<ParetoPoint>& points) {
  std::string csv = "j_tau,j_sigma,provenance,detail,feasible\n";
  for (const ParetoPoint& p : points) {
    sparsity_detail::append_point_row(csv, p);
  }
  return csv;
}

}  // namespace covsteer
