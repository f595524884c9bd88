#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "covsteer/io.hpp"

using namespace covsteer;
using nlohmann::json;

namespace {

json builtin_doc(int horizon, bool with_chance) {
  return problem_to_json(example_problem(horizon, with_chance));
}

}  // namespace

TEST_CASE("problem documents round trip through json") {
  const ProblemInstance original = example_problem(8, false);
  const ProblemInstance parsed = parse_problem(problem_to_json(original));
  CHECK(parsed.horizon == 8);
  CHECK(parsed.label == "paper8nc");
  CHECK_FALSE(parsed.chance.has_value());
  for (int k = 0; k < 8; ++k) {
    CHECK(parsed.stages[k].A == original.stages[k].A);
    CHECK(parsed.stages[k].B == original.stages[k].B);
    CHECK(parsed.stages[k].D == original.stages[k].D);
    CHECK(parsed.costs[k].Q == original.costs[k].Q);
    CHECK(parsed.costs[k].R == original.costs[k].R);
  }
  CHECK(parsed.boundary.Sigma0 == original.boundary.Sigma0);
  CHECK(parsed.boundary.SigmaN == original.boundary.SigmaN);

  const ProblemInstance chance = parse_problem(builtin_doc(29, true));
  REQUIRE(chance.chance.has_value());
  CHECK(chance.chance->u_max == 10.0);
  CHECK(chance.chance->gamma == 0.03);
}

TEST_CASE("time-invariant shorthand replicates one stage") {
  json doc = {
      {"horizon", 5},
      {"A", {{1.0, 0.1}, {0.0, 1.0}}},
      {"B", {{0.0}, {0.1}}},
      {"D", {{0.2, 0.0}, {0.0, 0.2}}},
      {"Q", {{1.0, 0.0}, {0.0, 1.0}}},
      {"R", {{2.0}}},
      {"boundary",
       {{"Sigma0", {{1.0, 0.0}, {0.0, 1.0}}},
        {"SigmaN", {{1.0, 0.0}, {0.0, 1.0}}}}},
  };
  const ProblemInstance inst = parse_problem(doc);
  REQUIRE(inst.stages.size() == 5);
  REQUIRE(inst.costs.size() == 5);
  CHECK(inst.stages[4].A(0, 1) == 0.1);
  CHECK(inst.costs[4].R(0, 0) == 2.0);
  CHECK(inst.label.empty());

  // The same data with single-object stages/costs parses identically.
  json obj_doc = doc;
  obj_doc.erase("A");
  obj_doc.erase("B");
  obj_doc.erase("D");
  obj_doc.erase("Q");
  obj_doc.erase("R");
  obj_doc["stages"] = {{"A", doc["A"]}, {"B", doc["B"]}, {"D", doc["D"]}};
  obj_doc["costs"] = {{"Q", doc["Q"]}, {"R", doc["R"]}};
  const ProblemInstance same = parse_problem(obj_doc);
  CHECK(same.stages[2].A == inst.stages[2].A);
  CHECK(same.costs[2].Q == inst.costs[2].Q);
}

TEST_CASE("mean fields are rejected, not dropped") {
  json doc = builtin_doc(4, false);
  doc["mu0"] = {{0.0}, {0.0}};
  CHECK_THROWS_AS(parse_problem(doc), SchemaError);

  json doc2 = builtin_doc(4, false);
  doc2["boundary"]["mean"] = {{1.0}, {0.0}};
  CHECK_THROWS_AS(parse_problem(doc2), SchemaError);

  json doc3 = builtin_doc(4, false);
  doc3["terminal_mean"] = json::array();
  CHECK_THROWS_AS(parse_problem(doc3), SchemaError);
}

TEST_CASE("malformed matrices and missing fields raise typed errors") {
  json doc = builtin_doc(3, false);
  doc["stages"][1]["A"] = {{1.0, 0.2}, {0.0}};
  CHECK_THROWS_AS(parse_problem(doc), ParseError);

  json doc2 = builtin_doc(3, false);
  doc2["stages"][0].erase("B");
  CHECK_THROWS_AS(parse_problem(doc2), SchemaError);

  json doc3 = builtin_doc(3, false);
  doc3["costs"][2]["Q"][0][0] = "fast";
  CHECK_THROWS_AS(parse_problem(doc3), ParseError);

  json doc4 = builtin_doc(3, false);
  doc4.erase("boundary");
  CHECK_THROWS_AS(parse_problem(doc4), SchemaError);

  json doc5 = builtin_doc(3, false);
  doc5["horizon"] = 0;
  CHECK_THROWS_AS(parse_problem(doc5), SchemaError);

  json doc6 = builtin_doc(3, false);
  doc6["stages"] = doc6["stages"][0];  // object form: costs is still an array
  doc6["costs"] = json::array({doc6["costs"]});
  CHECK_THROWS_AS(parse_problem(doc6), SchemaError);

  CHECK_THROWS_AS(parse_problem(json::array()), ParseError);
}

TEST_CASE("chance parameters are range checked") {
  json doc = builtin_doc(4, true);
  doc["chance"]["gamma"] = 0.0;
  CHECK_THROWS_AS(parse_problem(doc), SchemaError);
  doc["chance"]["gamma"] = 1.0;
  CHECK_THROWS_AS(parse_problem(doc), SchemaError);
  doc["chance"]["gamma"] = 0.03;
  doc["chance"]["u_max"] = 0.0;
  CHECK_THROWS_AS(parse_problem(doc), SchemaError);
  doc["chance"] = nullptr;
  CHECK_FALSE(parse_problem(doc).chance.has_value());
}

TEST_CASE("problems survive a save and load through the filesystem") {
  const auto path = std::filesystem::temp_directory_path() /
                    "covsteer_io_roundtrip.json";
  const ProblemInstance original = example_problem(29, true);
  save_problem(original, path.string());
  const ProblemInstance loaded = load_problem(path.string());
  CHECK(loaded.horizon == 29);
  CHECK(loaded.label == "paper29");
  CHECK(loaded.stages[17].A == original.stages[17].A);
  CHECK(loaded.boundary.SigmaN == original.boundary.SigmaN);
  REQUIRE(loaded.chance.has_value());
  CHECK(loaded.chance->gamma == 0.03);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_problem("/nonexistent/covsteer.json"), ParseError);
}

TEST_CASE("format_double round trips exactly") {
  const double values[] = {0.0,
                           1.0 / 3.0,
                           -2.0 / 7.0,
                           184.99321273905827,
                           6552.0986723887327,
                           1e-300,
                           -1.2345678901234567e+112,
                           5.991464547107979};
  for (double v : values) {
    const std::string text = format_double(v);
    CHECK(std::strtod(text.c_str(), nullptr) == v);
  }
}
