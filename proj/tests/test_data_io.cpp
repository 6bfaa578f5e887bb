#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "mgls/data_io.hpp"

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace mgls;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir()
  {
    path = fs::temp_directory_path() /
           ("mgls_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter()
  {
    static int c = 0;
    return c;
  }
};

void write_file(const fs::path& p, const std::string& text)
{
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("csv round trip preserves values exactly")
{
  TempDir tmp;
  CsvTable table;
  table.names = {"a", "b"};
  VectorXd a(3), b(3);
  a << 1.0, -2.5, 1.0 / 3.0;
  b << 0.1, 1e-17, 123456.789012345;
  table.series = {a, b};
  const std::string path = (tmp.path / "t.csv").string();
  save_profiles_csv(path, table);
  CsvTable back = load_profiles_csv(path);
  REQUIRE(back.names == table.names);
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 3; ++r) CHECK(back.series[c](r) == table.series[c](r));
}

TEST_CASE("csv errors name the offending row and column")
{
  TempDir tmp;
  const fs::path p = tmp.path / "bad.csv";

  write_file(p, "a,b\n1.0\n");
  CHECK_THROWS_WITH_AS(load_profiles_csv(p.string()),
                       doctest::Contains("ragged row 2"), std::runtime_error);

  write_file(p, "a,b\n1.0,x7\n");
  CHECK_THROWS_WITH_AS(load_profiles_csv(p.string()),
                       doctest::Contains("row 2, column 2"), std::runtime_error);

  write_file(p, "a,b\n");
  CHECK_THROWS_WITH_AS(load_profiles_csv(p.string()),
                       doctest::Contains("no data rows"), std::runtime_error);

  write_file(p, "");
  CHECK_THROWS(load_profiles_csv(p.string()));
  CHECK_THROWS(load_profiles_csv((tmp.path / "missing.csv").string()));
}

TEST_CASE("battery synthesis is deterministic and always valid")
{
  auto a = synthesize_batteries(50, 9);
  auto b = synthesize_batteries(50, 9);
  auto c = synthesize_batteries(50, 10);
  REQUIRE(a.params.size() == 50);
  bool any_diff = false;
  for (int i = 0; i < 50; ++i) {
    CHECK(a.params[i].capacity == b.params[i].capacity);
    CHECK(a.initial_soc[i] == b.initial_soc[i]);
    any_diff = any_diff || a.params[i].capacity != c.params[i].capacity;
    CHECK_NOTHROW(a.params[i].validate());
    CHECK(a.initial_soc[i] >= 0.0);
    CHECK(a.initial_soc[i] <= a.params[i].capacity);
  }
  CHECK(any_diff);
}

TEST_CASE("synthesized capacities have the configured mean")
{
  auto fleet = synthesize_batteries(10000, 123);
  double mean = 0.0;
  for (const auto& p : fleet.params) mean += p.capacity;
  mean /= 10000.0;
  // 3 sigma / sqrt(n) band around 2.0 (clamping at zero is ~4 sigma away)
  CHECK(std::abs(mean - 2.0) < 3.0 * 0.5 / 100.0);
}

TEST_CASE("reference splits the trailing average by household count")
{
  std::vector<std::vector<VectorXd>> predicted(2);
  predicted[0] = {VectorXd::Constant(4, 1.0), VectorXd::Constant(4, 1.0)};
  predicted[1] = {VectorXd::Constant(4, 1.0)};
  // constant unit consumption: overall average is 3 at every step
  CHECK(overall_average_consumption(predicted, 0, 2) == doctest::Approx(3.0));
  CHECK(overall_average_consumption(predicted, 3, 2) == doctest::Approx(3.0));
  auto z = reference_trajectory(predicted, 2, 2, {2, 1});
  CHECK(z[0] == doctest::Approx(2.0));
  CHECK(z[1] == doctest::Approx(1.0));
}

TEST_CASE("reference shares of the four-MG demo layout")
{
  Scenario sc = make_demo_scenario({.households = {40, 20, 20, 20}, .horizon = 8,
                                    .seed = 3, .extra_steps = 4});
  auto zeta = reference_window(sc, 0);
  REQUIRE(zeta.size() == 4);
  for (int n = 0; n < 8; ++n) {
    const double total = zeta[0](n) + zeta[1](n) + zeta[2](n) + zeta[3](n);
    CHECK(zeta[0](n) == doctest::Approx(0.4 * total).epsilon(1e-12));
    for (int m = 1; m < 4; ++m)
      CHECK(zeta[m](n) == doctest::Approx(0.2 * total).epsilon(1e-12));
  }
}

TEST_CASE("moving-average reference uses only the available prefix early on")
{
  std::vector<std::vector<VectorXd>> predicted(1);
  VectorXd w(4);
  w << 4.0, 8.0, 0.0, 0.0;
  predicted[0] = {w};
  CHECK(overall_average_consumption(predicted, 0, 3) == doctest::Approx(4.0));
  CHECK(overall_average_consumption(predicted, 1, 3) == doctest::Approx(6.0));
  CHECK(overall_average_consumption(predicted, 2, 3) == doctest::Approx(4.0));
  CHECK(overall_average_consumption(predicted, 3, 3) == doctest::Approx(8.0 / 3.0));
}

TEST_CASE("scenario round trip is field-for-field")
{
  TempDir tmp;
  Scenario sc = make_demo_scenario({.households = {2, 3}, .horizon = 6, .seed = 11,
                                    .extra_steps = 2});
  const std::string path = (tmp.path / "scn.json").string();
  save_scenario(sc, path);
  Scenario back = load_scenario(path);

  CHECK(back.name == sc.name);
  CHECK(back.dt == sc.dt);
  CHECK(back.horizon == sc.horizon);
  CHECK(back.seed == sc.seed);
  CHECK(back.reference_policy == sc.reference_policy);
  REQUIRE(back.num_mgs() == sc.num_mgs());
  for (int m = 0; m < sc.num_mgs(); ++m) {
    REQUIRE(back.batteries[m].size() == sc.batteries[m].size());
    for (std::size_t i = 0; i < sc.batteries[m].size(); ++i) {
      CHECK(back.batteries[m][i].alpha == sc.batteries[m][i].alpha);
      CHECK(back.batteries[m][i].beta == sc.batteries[m][i].beta);
      CHECK(back.batteries[m][i].gamma == sc.batteries[m][i].gamma);
      CHECK(back.batteries[m][i].capacity == sc.batteries[m][i].capacity);
      CHECK(back.batteries[m][i].u_min == sc.batteries[m][i].u_min);
      CHECK(back.batteries[m][i].u_max == sc.batteries[m][i].u_max);
      CHECK(back.initial_soc[m][i] == sc.initial_soc[m][i]);
      CHECK((back.actual[m][i] - sc.actual[m][i]).cwiseAbs().maxCoeff() == 0.0);
      CHECK((back.predicted[m][i] - sc.predicted[m][i]).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  CHECK((back.topology.lambda - sc.topology.lambda).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.topology.eta - sc.topology.eta).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("scenario ingest rejects malformed documents")
{
  TempDir tmp;
  Scenario sc = make_demo_scenario({.households = {1, 1}, .horizon = 4, .seed = 2,
                                    .extra_steps = 0});
  const fs::path path = tmp.path / "scn.json";
  save_scenario(sc, path.string());

  nlohmann::json j;
  {
    std::ifstream in(path);
    in >> j;
  }

  {
    nlohmann::json bad = j;
    bad["schema_version"] = "mgls-scenario-99";
    write_file(path, bad.dump());
    CHECK_THROWS_WITH_AS(load_scenario(path.string()),
                         doctest::Contains("schema version"), std::runtime_error);
  }
  {
    nlohmann::json bad = j;
    bad.erase("line_limits");
    write_file(path, bad.dump());
    CHECK_THROWS_WITH_AS(load_scenario(path.string()),
                         doctest::Contains("line_limits"), std::runtime_error);
  }
  {
    nlohmann::json bad = j;
    bad["line_limits"][0][1] = 99.0;  // asymmetric limits
    write_file(path, bad.dump());
    CHECK_THROWS(load_scenario(path.string()));
  }
  {
    write_file(path, "{ not json");
    CHECK_THROWS_WITH_AS(load_scenario(path.string()),
                         doctest::Contains("not valid JSON"), std::runtime_error);
  }
}

TEST_CASE("demo scenario shape and determinism")
{
  Scenario a = make_demo_scenario({.households = {2, 2, 2, 2}, .horizon = 8, .seed = 5,
                                   .extra_steps = 4});
  Scenario b = make_demo_scenario({.households = {2, 2, 2, 2}, .horizon = 8, .seed = 5,
                                   .extra_steps = 4});
  CHECK(a.series_length() == 12);
  CHECK(a.topology.edges.size() == 4);  // reference 4-MG network
  for (int m = 0; m < 4; ++m)
    for (int i = 0; i < 2; ++i)
      CHECK((a.actual[m][i] - b.actual[m][i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS(make_demo_scenario({.households = {}}));
  CHECK_THROWS(make_demo_scenario({.households = {0, 1}}));
}

TEST_CASE("random scenario generator produces loadable instances")
{
  TempDir tmp;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Scenario sc = make_random_scenario({.num_mgs = 3, .horizon = 3, .seed = seed});
    const std::string path = (tmp.path / "r.json").string();
    save_scenario(sc, path);
    Scenario back = load_scenario(path);
    CHECK(back.num_mgs() == 3);
    CHECK_NOTHROW(models_at(back, 0, back.initial_soc));
  }
}
