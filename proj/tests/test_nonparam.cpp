#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kolmo/nonparam.hpp"
#include "kolmo/rng.hpp"
#include "kolmo/simulate.hpp"

using namespace kolmo;

namespace {

SubjectRecord survival_subject(const std::string& id, double t, bool event) {
  SubjectRecord s;
  s.id = id;
  s.observations = {{0.0, 0, ObsKind::Start},
                    {t, event ? 1 : 0, event ? ObsKind::Exact : ObsKind::Censor}};
  s.event_observed = event;
  return s;
}

}  // namespace

TEST_CASE("product-limit curve on the textbook three-subject example") {
  StepFunction s = kaplan_meier({1.0, 2.0, 3.0}, {1, 0, 1});
  REQUIRE(s(0.0) == 1.0);
  REQUIRE(s(0.99) == 1.0);
  REQUIRE(s(1.0) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(s(2.0) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(s(2.9) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(s(3.0) == 0.0);
  REQUIRE(s(50.0) == 0.0);
}

TEST_CASE("all-censored sample keeps survival at one") {
  StepFunction s = kaplan_meier({0.5, 1.0, 4.0}, {0, 0, 0});
  REQUIRE(s.times.empty());
  for (double t : {0.0, 0.7, 3.0, 10.0}) REQUIRE(s(t) == 1.0);
}

TEST_CASE("without censoring the curve is the complement of the empirical cdf") {
  Rng rng(91);
  const int n = 100;
  std::vector<double> times(n);
  std::vector<int> events(n, 1);
  for (auto& t : times) t = rng.exponential(0.7);
  StepFunction s = kaplan_meier(times, events);
  for (double q : {0.1, 0.5, 1.0, 2.0, 4.0}) {
    double above = 0;
    for (double t : times)
      if (t > q) above += 1.0;
    REQUIRE(s(q) == Catch::Approx(above / n).margin(1e-12));
  }
}

TEST_CASE("events precede censorings at tied times") {
  StepFunction s = kaplan_meier({2.0, 2.0, 3.0}, {1, 0, 1});
  REQUIRE(s(2.0) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(s(3.0) == 0.0);
}

TEST_CASE("censoring-distribution estimator flips the event flag") {
  StepFunction g = censoring_km({1.0, 2.0, 3.0}, {1, 0, 1});
  REQUIRE(g(1.0) == 1.0);
  REQUIRE(g(2.0) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(g(3.0) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("product-limit input validation") {
  REQUIRE_THROWS_AS(kaplan_meier({}, {}), std::invalid_argument);
  REQUIRE_THROWS_AS(kaplan_meier({1.0, 2.0}, {1}), std::invalid_argument);
  REQUIRE_THROWS_AS(kaplan_meier({-1.0}, {1}), std::invalid_argument);
}

TEST_CASE("two-state occupation matches the product-limit curve") {
  Rng rng(17);
  Dataset ds;
  ds.topology = TransitionTopology::make(2, {{0, 1}});
  std::vector<double> times;
  std::vector<int> events;
  for (int i = 0; i < 200; ++i) {
    double t = rng.exponential(1.0);
    bool event = rng.uniform01() < 0.7;
    ds.subjects.push_back(survival_subject("s" + std::to_string(i), t, event));
    times.push_back(t);
    events.push_back(event ? 1 : 0);
  }
  StepFunction km = kaplan_meier(times, events);

  std::vector<double> grid = times;
  std::sort(grid.begin(), grid.end());
  for (std::size_t k = 0; k + 1 < times.size(); ++k) grid.push_back(0.5 * (grid[k] + grid[k + 1]));
  grid.push_back(0.0);
  std::sort(grid.begin(), grid.end());

  OccupationEstimate aj = aalen_johansen(ds, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    REQUIRE(aj.occupation(g, 0) == Catch::Approx(km(grid[g])).margin(1e-12));
    REQUIRE(aj.occupation(g, 1) == Catch::Approx(1.0 - km(grid[g])).margin(1e-12));
  }
}

TEST_CASE("occupation stays at the initial distribution when nothing happens") {
  Dataset ds;
  ds.topology = TransitionTopology::make(3, {{0, 1}, {0, 2}, {1, 2}});
  for (int i = 0; i < 4; ++i) {
    SubjectRecord s;
    s.id = "c" + std::to_string(i);
    s.observations = {{0.0, i == 0 ? 1 : 0, ObsKind::Start}, {2.0, i == 0 ? 1 : 0, ObsKind::Censor}};
    ds.subjects.push_back(s);
  }
  OccupationEstimate aj = aalen_johansen(ds, {0.0, 1.0, 1.9});
  for (int g = 0; g < 3; ++g) {
    REQUIRE(aj.occupation(g, 0) == 0.75);
    REQUIRE(aj.occupation(g, 1) == 0.25);
    REQUIRE(aj.occupation(g, 2) == 0.0);
  }
  REQUIRE_FALSE(aj.extended_beyond_data);
}

TEST_CASE("single subject jump moves all mass at the transition time") {
  Dataset ds;
  ds.topology = TransitionTopology::make(3, {{0, 1}, {0, 2}, {1, 2}});
  SubjectRecord s;
  s.id = "only";
  s.observations = {{0.0, 0, ObsKind::Start}, {1.0, 1, ObsKind::Exact}, {2.0, 1, ObsKind::Censor}};
  ds.subjects.push_back(s);
  OccupationEstimate aj = aalen_johansen(ds, {0.5, 1.0, 1.5, 3.0});
  REQUIRE(aj.occupation(0, 0) == 1.0);
  REQUIRE(aj.occupation(1, 1) == 1.0);
  REQUIRE(aj.occupation(2, 1) == 1.0);
  REQUIRE(aj.occupation(3, 1) == 1.0);
  REQUIRE(aj.extended_beyond_data);
}

TEST_CASE("interval-censored records are rejected with the subject named") {
  Dataset ds;
  ds.topology = TransitionTopology::make(2, {{0, 1}});
  SubjectRecord s;
  s.id = "panel-7";
  s.observations = {{0.0, 0, ObsKind::Start}, {1.5, 1, ObsKind::Interval}};
  ds.subjects.push_back(s);
  REQUIRE_THROWS_WITH(aalen_johansen(ds, {1.0}), Catch::Matchers::ContainsSubstring("panel-7"));
}

TEST_CASE("occupation rows stay stochastic on simulated illness-death data") {
  SimPreset preset = sim_preset("illness-death-5000");
  Dataset ds = sample_paths(preset.spec, 400, preset.seed);
  std::vector<double> grid;
  for (int k = 0; k <= 10; ++k) grid.push_back(preset.spec.t_max * k / 10.0);
  OccupationEstimate aj = aalen_johansen(ds, grid);
  double prev_dead = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    REQUIRE(std::abs(aj.occupation.row(g).sum() - 1.0) < 1e-12);
    REQUIRE(aj.occupation.row(g).minCoeff() >= 0.0);
    REQUIRE(aj.occupation(g, 2) >= prev_dead - 1e-15);
    prev_dead = aj.occupation(g, 2);
  }
}

TEST_CASE("subject order does not change the estimate") {
  SimPreset preset = sim_preset("competing-risks-5000");
  Dataset ds = sample_paths(preset.spec, 300, preset.seed);
  std::vector<double> grid = {0.5, 1.0, 2.0, 4.0};
  OccupationEstimate a = aalen_johansen(ds, grid);
  Dataset shuffled = ds;
  std::reverse(shuffled.subjects.begin(), shuffled.subjects.end());
  OccupationEstimate b = aalen_johansen(shuffled, grid);
  REQUIRE(a.occupation == b.occupation);
}

TEST_CASE("occupation tracks the analytic curve for a unit-rate process") {
  SimPreset preset = sim_preset("two-state-smoke");
  Dataset ds = sample_paths(preset.spec, preset.n_subjects, preset.seed);
  std::vector<double> grid = {0.5, 1.0, 2.0};
  OccupationEstimate aj = aalen_johansen(ds, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double p = std::exp(-grid[g]);
    const double band = 4.0 * std::sqrt(p * (1.0 - p) / preset.n_subjects);
    REQUIRE(std::abs(aj.occupation(g, 0) - p) < band);
  }
}
