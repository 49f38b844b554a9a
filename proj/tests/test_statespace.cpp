#include <catch2/catch_amalgamated.hpp>

#include "kolmo/statespace.hpp"

using namespace kolmo;

namespace {

TransitionTopology illness_death() {
  return TransitionTopology::make(3, {{0, 1}, {0, 2}, {1, 2}});
}

SubjectRecord subj(std::vector<Observation> obs, bool event, std::vector<double> cov = {}) {
  SubjectRecord s;
  s.observations = std::move(obs);
  s.event_observed = event;
  s.covariates = std::move(cov);
  s.entry_time = s.observations.front().time;
  return s;
}

}  // namespace

TEST_CASE("topology basics") {
  auto t = illness_death();
  REQUIRE(t.q_count() == 3);
  REQUIRE(t.is_allowed(0, 1));
  REQUIRE(t.is_allowed(1, 2));
  REQUIRE_FALSE(t.is_allowed(1, 0));
  REQUIRE_FALSE(t.is_allowed(2, 2));
  REQUIRE(t.absorbing[2]);
  REQUIRE_FALSE(t.absorbing[0]);
  REQUIRE(t.edge_id(0, 1) == 0);
  REQUIRE(t.edge_id(0, 2) == 1);
  REQUIRE(t.edge_id(1, 2) == 2);
  REQUIRE(t.edge_id(2, 0) == -1);
  REQUIRE(t.reachable(0, 2));
  REQUIRE_FALSE(t.reachable(2, 0));
}

TEST_CASE("valid chains pass validation") {
  Dataset ds;
  ds.topology = illness_death();
  ds.subjects.push_back(subj({{0.0, 0, ObsKind::Start}, {1.2, 1, ObsKind::Exact}, {3.0, 2, ObsKind::Exact}}, true));
  ds.subjects.push_back(subj({{0.0, 0, ObsKind::Start}, {2.0, 1, ObsKind::Interval}, {4.0, 1, ObsKind::Censor}}, false));
  ds.subjects.push_back(subj({{0.5, 0, ObsKind::Start}}, false));
  REQUIRE(validate_dataset(ds).empty());
}

TEST_CASE("ordering violations are flagged") {
  Dataset ds;
  ds.topology = illness_death();
  ds.subjects.push_back(subj({{5.0, 0, ObsKind::Start}, {2.0, 2, ObsKind::Exact}}, true));
  auto v = validate_dataset(ds);
  REQUIRE(v.size() == 1);
  REQUIRE(v[0].rule == "non-increasing observation times");
}

TEST_CASE("disallowed transitions are flagged") {
  Dataset ds;
  ds.topology = illness_death();
  ds.subjects.push_back(subj({{0.0, 1, ObsKind::Start}, {1.0, 0, ObsKind::Exact}}, true));
  auto v = validate_dataset(ds);
  REQUIRE(v.size() == 1);
  REQUIRE(v[0].rule == "transition not allowed by the topology");
}

TEST_CASE("interval transitions only need a path") {
  Dataset ds;
  ds.topology = illness_death();
  // 0 -> 2 directly is allowed; 0 -> 2 as interval is fine; 2 -> 0 interval is not.
  ds.subjects.push_back(subj({{0.0, 0, ObsKind::Start}, {1.0, 2, ObsKind::Interval}}, true));
  REQUIRE(validate_dataset(ds).empty());
  ds.subjects.push_back(subj({{0.0, 2, ObsKind::Start}, {1.0, 0, ObsKind::Interval}}, true));
  auto v = validate_dataset(ds);
  REQUIRE(v.size() == 1);
  REQUIRE(v[0].rule == "interval transition between unreachable states");
}

TEST_CASE("censor row must repeat the state and close the record") {
  Dataset ds;
  ds.topology = illness_death();
  ds.subjects.push_back(subj({{0.0, 0, ObsKind::Start}, {1.0, 1, ObsKind::Censor}}, false));
  auto v = validate_dataset(ds);
  REQUIRE(v.size() == 1);
  REQUIRE(v[0].rule == "censoring row changes the state");
}

TEST_CASE("event flag consistency") {
  Dataset ds;
  ds.topology = illness_death();
  ds.subjects.push_back(subj({{0.0, 0, ObsKind::Start}, {1.0, 0, ObsKind::Censor}}, true));
  auto v = validate_dataset(ds);
  REQUIRE(v.size() == 1);
  REQUIRE(v[0].rule == "event flag set on a censoring row");

  Dataset ds2;
  ds2.topology = illness_death();
  // Unset flag on a non-absorbing observed transition is inconsistent.
  ds2.subjects.push_back(subj({{0.0, 0, ObsKind::Start}, {1.0, 1, ObsKind::Exact}}, false));
  auto v2 = validate_dataset(ds2);
  REQUIRE(v2.size() == 1);
  REQUIRE(v2[0].rule == "censor flag unset on a non-absorbing observed final row");

  Dataset ds3;
  ds3.topology = illness_death();
  // Reaching an absorbing state with the flag unset is accepted as fully observed.
  ds3.subjects.push_back(subj({{0.0, 0, ObsKind::Start}, {1.0, 2, ObsKind::Exact}}, false));
  REQUIRE(validate_dataset(ds3).empty());
}

TEST_CASE("covariate dimension mismatches are caught") {
  Dataset ds;
  ds.topology = illness_death();
  ds.covariate_names = {"age", "sex"};
  ds.subjects.push_back(subj({{0.0, 0, ObsKind::Start}}, false, {1.0}));
  auto v = validate_dataset(ds);
  REQUIRE(v.size() == 1);
  REQUIRE(v[0].rule == "covariate dimension mismatch");
}

TEST_CASE("z-score normalization uses the population standard deviation") {
  Dataset ds;
  ds.topology = TransitionTopology::make(2, {{0, 1}});
  ds.covariate_names = {"x", "c"};
  for (double x : {1.0, 2.0, 3.0}) ds.subjects.push_back(subj({{0.0, 0, ObsKind::Start}}, false, {x, 7.0}));
  auto st = normalize_covariates(ds);
  REQUIRE(st.mean[0] == Catch::Approx(2.0));
  REQUIRE(st.sd[0] == Catch::Approx(std::sqrt(2.0 / 3.0)));
  REQUIRE(ds.subjects[0].covariates[0] == Catch::Approx(-1.224744871391589).epsilon(1e-12));
  REQUIRE(ds.subjects[1].covariates[0] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(ds.subjects[2].covariates[0] == Catch::Approx(1.224744871391589).epsilon(1e-12));
  // Constant column: flagged, centered but not scaled.
  REQUIRE(st.constant[1] == 1);
  REQUIRE(st.sd[1] == 1.0);
  REQUIRE(ds.subjects[0].covariates[1] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("stored statistics reproduce the training transform") {
  Dataset train;
  train.topology = TransitionTopology::make(2, {{0, 1}});
  train.covariate_names = {"x"};
  for (double x : {1.0, 2.0, 3.0}) train.subjects.push_back(subj({{0.0, 0, ObsKind::Start}}, false, {x}));
  auto st = normalize_covariates(train);

  Dataset test;
  test.topology = train.topology;
  test.covariate_names = {"x"};
  test.subjects.push_back(subj({{0.0, 0, ObsKind::Start}}, false, {4.0}));
  normalize_covariates(test, st);
  REQUIRE(test.subjects[0].covariates[0] == Catch::Approx((4.0 - 2.0) / std::sqrt(2.0 / 3.0)).epsilon(1e-12));
}
