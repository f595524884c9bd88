#pragma once

#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "covsteer/model.hpp"

namespace covsteer {

struct ParseError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};

/// 17 significant digits: shortest text that round-trips any double exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

namespace detail {

inline Matrix matrix_from_json(const nlohmann::json& j,
                               const std::string& field) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw ParseError(field + ": expected a non-empty array of rows");
  }
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  if (cols == 0) throw ParseError(field + ": empty row");
  Matrix M(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw ParseError(field + ": ragged rows at row " + std::to_string(i));
    }
    for (int c = 0; c < cols; ++c) {
      if (!row[c].is_number()) {
        throw ParseError(field + ": non-numeric entry at (" +
                         std::to_string(i) + "," + std::to_string(c) + ")");
      }
      M(i, c) = row[c].get<double>();
    }
  }
  return M;
}

inline nlohmann::json matrix_to_json(const Matrix& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline const nlohmann::json& require_field(const nlohmann::json& j,
                                           const std::string& field,
                                           const std::string& where) {
  auto it = j.find(field);
  if (it == j.end()) {
    throw SchemaError("missing field '" + field + "' in " + where);
  }
  return *it;
}

// Means are implicitly zero in this problem class; any attempt to supply one
// is rejected rather than silently dropped.
inline void reject_mean_fields(const nlohmann::json& j,
                               const std::string& where) {
  static const char* const kMeanKeys[] = {
      "mean",  "means",   "mu",      "mu0",      "muN",
      "mean0", "meanN",   "mu_0",    "mu_N",     "x0_mean",
      "xN_mean", "initial_mean", "terminal_mean"};
  for (const char* key : kMeanKeys) {
    if (j.contains(key)) {
      throw SchemaError("field '" + std::string(key) + "' in " + where +
                        ": mean vectors are not representable (means are "
                        "identically zero)");
    }
  }
}

}  // namespace detail

/// Parses a problem document. Two accepted shapes:
///   - time-varying: "stages" and "costs" are arrays of length `horizon`;
///   - time-invariant: a single {A,B,D} / {Q,R} object (or top-level
///     A,B,D,Q,R fields) replicated `horizon` times.
/// Validation is not implied; callers run validate() on the result.
inline ProblemInstance parse_problem(const nlohmann::json& doc) {
  using detail::matrix_from_json;
  using detail::require_field;

  if (!doc.is_object()) throw ParseError("document root must be an object");
  detail::reject_mean_fields(doc, "document root");

  ProblemInstance inst;
  const auto& horizon = require_field(doc, "horizon", "document root");
  if (!horizon.is_number_integer() || horizon.get<long long>() < 1) {
    throw SchemaError("horizon must be an integer >= 1");
  }
  inst.horizon = horizon.get<int>();

  auto parse_stage = [](const nlohmann::json& j,
                        const std::string& where) -> StageDynamics {
    StageDynamics s;
    s.A = matrix_from_json(require_field(j, "A", where), where + ".A");
    s.B = matrix_from_json(require_field(j, "B", where), where + ".B");
    s.D = matrix_from_json(require_field(j, "D", where), where + ".D");
    return s;
  };
  auto parse_cost = [](const nlohmann::json& j,
                       const std::string& where) -> StageCost {
    StageCost c;
    c.Q = matrix_from_json(require_field(j, "Q", where), where + ".Q");
    c.R = matrix_from_json(require_field(j, "R", where), where + ".R");
    return c;
  };

  if (doc.contains("stages")) {
    const auto& stages = doc["stages"];
    if (stages.is_array()) {
      if (static_cast<int>(stages.size()) != inst.horizon) {
        throw SchemaError("stages: expected " + std::to_string(inst.horizon) +
                          " entries, got " + std::to_string(stages.size()));
      }
      for (int k = 0; k < inst.horizon; ++k) {
        inst.stages.push_back(
            parse_stage(stages[k], "stages[" + std::to_string(k) + "]"));
      }
    } else if (stages.is_object()) {
      inst.stages.assign(inst.horizon, parse_stage(stages, "stages"));
    } else {
      throw ParseError("stages: expected array or object");
    }
    const auto& costs = require_field(doc, "costs", "document root");
    if (costs.is_array()) {
      if (static_cast<int>(costs.size()) != inst.horizon) {
        throw SchemaError("costs: expected " + std::to_string(inst.horizon) +
                          " entries, got " + std::to_string(costs.size()));
      }
      for (int k = 0; k < inst.horizon; ++k) {
        inst.costs.push_back(
            parse_cost(costs[k], "costs[" + std::to_string(k) + "]"));
      }
    } else if (costs.is_object()) {
      inst.costs.assign(inst.horizon, parse_cost(costs, "costs"));
    } else {
      throw ParseError("costs: expected array or object");
    }
  } else if (doc.contains("A")) {
    inst.stages.assign(inst.horizon, parse_stage(doc, "document root"));
    inst.costs.assign(inst.horizon, parse_cost(doc, "document root"));
  } else {
    throw SchemaError("missing field 'stages' (or time-invariant A,B,D,Q,R)");
  }

  const auto& boundary = require_field(doc, "boundary", "document root");
  detail::reject_mean_fields(boundary, "boundary");
  inst.boundary.Sigma0 = matrix_from_json(
      require_field(boundary, "Sigma0", "boundary"), "boundary.Sigma0");
  inst.boundary.SigmaN = matrix_from_json(
      require_field(boundary, "SigmaN", "boundary"), "boundary.SigmaN");

  if (doc.contains("chance") && !doc["chance"].is_null()) {
    const auto& chance = doc["chance"];
    ChanceConstraintSpec spec;
    const auto& u_max = require_field(chance, "u_max", "chance");
    const auto& gamma = require_field(chance, "gamma", "chance");
    if (!u_max.is_number() || !gamma.is_number()) {
      throw ParseError("chance: u_max and gamma must be numbers");
    }
    spec.u_max = u_max.get<double>();
    spec.gamma = gamma.get<double>();
    if (!(spec.u_max > 0.0)) throw SchemaError("chance.u_max must be > 0");
    if (!(spec.gamma > 0.0 && spec.gamma < 1.0)) {
      throw SchemaError("chance.gamma must lie in (0,1)");
    }
    inst.chance = spec;
  }

  if (doc.contains("label")) {
    if (!doc["label"].is_string()) throw ParseError("label must be a string");
    inst.label = doc["label"].get<std::string>();
  }
  return inst;
}

inline ProblemInstance load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return parse_problem(doc);
}

inline nlohmann::json problem_to_json(const ProblemInstance& inst) {
  using detail::matrix_to_json;
  nlohmann::json doc;
  doc["horizon"] = inst.horizon;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : inst.stages) {
    stages.push_back({{"A", matrix_to_json(s.A)},
                      {"B", matrix_to_json(s.B)},
                      {"D", matrix_to_json(s.D)}});
  }
  doc["stages"] = stages;
  nlohmann::json costs = nlohmann::json::array();
  for (const auto& c : inst.costs) {
    costs.push_back({{"Q", matrix_to_json(c.Q)}, {"R", matrix_to_json(c.R)}});
  }
  doc["costs"] = costs;
  doc["boundary"] = {{"Sigma0", matrix_to_json(inst.boundary.Sigma0)},
                     {"SigmaN", matrix_to_json(inst.boundary.SigmaN)}};
  if (inst.chance) {
    doc["chance"] = {{"u_max", inst.chance->u_max},
                     {"gamma", inst.chance->gamma}};
  }
  if (!inst.label.empty()) doc["label"] = inst.label;
  return doc;
}

inline void save_problem(const ProblemInstance& inst, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << problem_to_json(inst).dump(2) << "\n";
}

}  // namespace covsteer
