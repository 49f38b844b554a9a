#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kolmo/metrics.hpp"
#include "kolmo/rng.hpp"
#include "kolmo/simulate.hpp"

using namespace kolmo;

namespace {

// Smooth per-subject survival curves S_i(t) = exp(-r_i t) on a shared axis.
CurveSet exp_curves(const std::vector<double>& rates, const std::vector<double>& axis) {
  CurveSet cs;
  cs.times = axis;
  cs.values.resize(rates.size(), axis.size());
  for (std::size_t i = 0; i < rates.size(); ++i)
    for (std::size_t k = 0; k < axis.size(); ++k) cs.values(i, k) = std::exp(-rates[i] * axis[k]);
  return cs;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(n);
  for (int k = 0; k < n; ++k) v[k] = lo + (hi - lo) * k / (n - 1.0);
  return v;
}

}  // namespace

TEST_CASE("quantile grid spans the trimmed event time range") {
  Rng rng(5);
  std::vector<double> events;
  for (int i = 0; i < 500; ++i) events.push_back(rng.uniform(0.0, 10.0));
  EvalGrid g = EvalGrid::quantiles(events, 100);
  REQUIRE(g.times.size() <= 100);
  REQUIRE(g.times.size() >= 90);
  for (std::size_t k = 1; k < g.times.size(); ++k) REQUIRE(g.times[k] > g.times[k - 1]);
  REQUIRE(g.times.front() >= *std::min_element(events.begin(), events.end()));
  REQUIRE(g.times.back() <= *std::max_element(events.begin(), events.end()));
  REQUIRE(g.times.front() == Catch::Approx(empirical_quantile(events, 0.01)));
  REQUIRE(g.times.back() == Catch::Approx(empirical_quantile(events, 0.99)));
  REQUIRE_THROWS_AS(EvalGrid::quantiles({}, 100), std::invalid_argument);

  EvalGrid u = EvalGrid::uniform(events, 50);
  const double step = u.times[1] - u.times[0];
  for (std::size_t k = 1; k < u.times.size(); ++k)
    REQUIRE(u.times[k] - u.times[k - 1] == Catch::Approx(step).margin(1e-12));
}

TEST_CASE("a single dominated pair is fully concordant") {
  CurveSet pred;
  pred.times = {0.0, 1.0, 2.0};
  pred.values.resize(2, 3);
  pred.values << 1.0, 0.3, 0.1, 1.0, 0.8, 0.5;
  REQUIRE(concordance_td(pred, {1.0, 2.0}, {1, 1}) == 1.0);
}

TEST_CASE("identical predictions score one half") {
  CurveSet pred = exp_curves({0.4, 0.4, 0.4, 0.4}, linspace(0.0, 5.0, 20));
  REQUIRE(concordance_td(pred, {1.0, 2.0, 3.0, 4.0}, {1, 1, 0, 1}) == 0.5);
}

TEST_CASE("uninformative predictions sit at the permutation null") {
  double sum = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(1000 + seed);
    const int n = 100;
    std::vector<double> times(n), rates(n);
    std::vector<int> events(n);
    for (int i = 0; i < n; ++i) {
      times[i] = rng.exponential(1.0);
      events[i] = rng.uniform01() < 0.7 ? 1 : 0;
      rates[i] = rng.uniform(0.2, 3.0);
    }
    CurveSet pred = exp_curves(rates, linspace(0.0, 8.0, 40));
    const double c = concordance_td(pred, times, events);
    REQUIRE(c > 0.3);
    REQUIRE(c < 0.7);
    sum += c;
  }
  REQUIRE(std::abs(sum / 50.0 - 0.5) < 0.05);
}

TEST_CASE("concordance needs at least one comparable pair") {
  CurveSet pred = exp_curves({0.5, 1.0}, linspace(0.0, 3.0, 5));
  REQUIRE_THROWS_AS(concordance_td(pred, {1.0, 2.0}, {0, 0}), std::invalid_argument);
  REQUIRE_THROWS_AS(concordance_td(pred, {1.5, 1.5}, {1, 1}), std::invalid_argument);
}

TEST_CASE("concordance ignores monotone rescaling of the curves") {
  Rng rng(31);
  const int n = 60;
  std::vector<double> times(n), rates(n);
  std::vector<int> events(n);
  for (int i = 0; i < n; ++i) {
    times[i] = rng.exponential(0.8);
    events[i] = rng.uniform01() < 0.6 ? 1 : 0;
    rates[i] = rng.uniform(0.2, 2.5);
  }
  CurveSet pred = exp_curves(rates, linspace(0.0, 10.0, 50));
  CurveSet squared = pred;
  squared.values = pred.values.array().square();
  REQUIRE(concordance_td(pred, times, events) == concordance_td(squared, times, events));
}

TEST_CASE("indicator predictions have zero Brier score without censoring") {
  std::vector<double> times = {0.5, 1.0, 1.5, 2.0, 2.5};
  std::vector<int> events(5, 1);
  CurveSet pred;
  pred.times = times;
  pred.values.resize(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 5; ++k) pred.values(i, k) = times[k] < times[i] ? 1.0 : 0.0;
  StepFunction G = censoring_km(times, events);
  ScoreCurve bs = brier_ipcw(pred, times, events, G, times);
  for (int k = 0; k < 5; ++k) REQUIRE(bs.values[k] == 0.0);
  REQUIRE(bs.integrated == 0.0);

  ScoreCurve ll = ibll(pred, times, events, G, times);
  for (int k = 0; k < 5; ++k) REQUIRE(std::abs(ll.values[k]) < 1e-5);
}

TEST_CASE("the coin-flip predictor scores one quarter") {
  std::vector<double> times = {1.0, 2.0, 3.0, 4.0};
  std::vector<int> events(4, 1);
  CurveSet pred;
  pred.times = {0.0, 5.0};
  pred.values = MatrixXd::Constant(4, 2, 0.5);
  StepFunction G = censoring_km(times, events);
  std::vector<double> grid = linspace(0.5, 3.5, 7);
  ScoreCurve bs = brier_ipcw(pred, times, events, G, grid);
  for (int k = 0; k < 7; ++k) REQUIRE(bs.values[k] == Catch::Approx(0.25).margin(1e-15));
  REQUIRE(bs.integrated == Catch::Approx(0.25).margin(1e-15));
  ScoreCurve ll = ibll(pred, times, events, G, grid);
  for (int k = 0; k < 7; ++k) REQUIRE(ll.values[k] == Catch::Approx(std::log(0.5)).margin(1e-12));
}

TEST_CASE("without censoring the weighted score equals the plain empirical Brier") {
  Rng rng(77);
  const int n = 80;
  std::vector<double> times(n), rates(n);
  std::vector<int> events(n, 1);
  for (int i = 0; i < n; ++i) {
    times[i] = rng.exponential(1.2);
    rates[i] = rng.uniform(0.3, 2.0);
  }
  CurveSet pred = exp_curves(rates, linspace(0.0, 6.0, 30));
  StepFunction G = censoring_km(times, events);
  std::vector<double> grid = linspace(0.1, 3.0, 12);
  ScoreCurve bs = brier_ipcw(pred, times, events, G, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double plain = 0.0;
    for (int i = 0; i < n; ++i) {
      const double s = pred.eval(i, grid[g]);
      if (times[i] <= grid[g])
        plain += s * s;
      else
        plain += (1.0 - s) * (1.0 - s);
    }
    REQUIRE(bs.values[g] == plain / n);
  }
  REQUIRE(bs.capped_weights == 0);
}

TEST_CASE("weights are capped under extreme censoring and counted") {
  const int n = 200;
  std::vector<double> times;
  std::vector<int> events;
  for (int i = 1; i < n; ++i) {
    times.push_back(0.001 * i);
    events.push_back(0);
  }
  times.push_back(2.0);
  events.push_back(1);
  CurveSet pred;
  pred.times = {0.0, 3.0};
  pred.values = MatrixXd::Constant(n, 2, 0.8);
  StepFunction G = censoring_km(times, events);
  REQUIRE(G(1.0) == Catch::Approx(1.0 / n).margin(1e-12));
  ScoreCurve bs = brier_ipcw(pred, times, events, G, {1.0});
  REQUIRE(bs.capped_weights == 1);
  REQUIRE(bs.values[0] == Catch::Approx(100.0 * 0.04 / n).margin(1e-12));
}

TEST_CASE("weighted score tracks the oracle variance curve under censoring") {
  SimPreset preset = sim_preset("survival-3cov");
  Dataset ds = sample_paths(preset.spec, 5000, preset.seed);
  const int n = static_cast<int>(ds.subjects.size());
  std::vector<double> times(n), event_times;
  std::vector<int> events(n);
  for (int i = 0; i < n; ++i) {
    times[i] = ds.subjects[i].final_time();
    events[i] = ds.subjects[i].event_observed ? 1 : 0;
    if (events[i]) event_times.push_back(times[i]);
  }
  EvalGrid grid = EvalGrid::quantiles(event_times, 8);

  CurveSet truth;
  truth.times = grid.times;
  truth.values.resize(n, grid.times.size());
  for (int i = 0; i < n; ++i) {
    const auto& cv = ds.subjects[i].covariates;
    VectorXd x = Eigen::Map<const VectorXd>(cv.data(), cv.size());
    GroundTruthSlice slice = true_occupation(preset.spec, x, grid.times);
    truth.values.row(i) = slice.occupation.col(0).transpose();
  }

  StepFunction G = censoring_km(times, events);
  ScoreCurve bs = brier_ipcw(truth, times, events, G, grid.times);
  for (std::size_t g = 0; g < grid.times.size(); ++g) {
    double oracle = 0.0;
    for (int i = 0; i < n; ++i) {
      const double p = truth.eval(i, grid.times[g]);
      oracle += p * (1.0 - p);
    }
    oracle /= n;
    REQUIRE(std::abs(bs.values[g] - oracle) < 0.02);
  }
}

TEST_CASE("two-state reduction of the multi-state score matches the survival Brier") {
  TrueHazardSpec spec;
  spec.topology = TransitionTopology::make(2, {{0, 1}});
  EdgeHazard e;
  e.shape = 1.0;
  e.scale = 1.0;
  spec.edges = {e};
  spec.t_max = 4.0;
  spec.censor_rate = 0.5;
  Dataset ds = sample_paths(spec, 200, 99);

  const int n = static_cast<int>(ds.subjects.size());
  Rng rng(3);
  std::vector<double> rates(n), times(n);
  std::vector<int> events(n);
  for (int i = 0; i < n; ++i) {
    rates[i] = rng.uniform(0.2, 2.0);
    times[i] = ds.subjects[i].final_time();
    events[i] = ds.subjects[i].event_observed ? 1 : 0;
  }
  std::vector<double> axis = linspace(0.0, 4.0, 25);
  CurveSet alive = exp_curves(rates, axis);
  CurveSet dead = alive;
  dead.values = 1.0 - alive.values.array();

  StepFunction G = censoring_km(times, events);
  std::vector<double> grid = linspace(0.2, 3.0, 9);
  ScoreCurve survival = brier_ipcw(alive, times, events, G, grid);
  std::vector<ScoreCurve> ms = multistate_brier({alive, dead}, ds, G, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    REQUIRE(ms[0].values[g] == Catch::Approx(survival.values[g]).margin(1e-12));
    REQUIRE(ms[1].values[g] == Catch::Approx(survival.values[g]).margin(1e-12));
  }
}

TEST_CASE("per-state scores of the oracle sum to the occupation variance") {
  SimPreset preset = sim_preset("competing-risks-5000");
  Dataset ds = sample_paths(preset.spec, 1500, preset.seed);
  const int n = static_cast<int>(ds.subjects.size());
  const int S = ds.topology.n_states;
  std::vector<double> times(n);
  std::vector<int> events(n);
  for (int i = 0; i < n; ++i) {
    times[i] = ds.subjects[i].final_time();
    events[i] = ds.subjects[i].event_observed ? 1 : 0;
  }
  std::vector<double> grid = {0.5, 1.0, 1.5, 2.5};

  std::vector<CurveSet> pred(S);
  for (int j = 0; j < S; ++j) {
    pred[j].times = grid;
    pred[j].values.resize(n, grid.size());
  }
  for (int i = 0; i < n; ++i) {
    const auto& cv = ds.subjects[i].covariates;
    VectorXd x = Eigen::Map<const VectorXd>(cv.data(), cv.size());
    GroundTruthSlice slice = true_occupation(preset.spec, x, grid);
    for (int j = 0; j < S; ++j) pred[j].values.row(i) = slice.occupation.col(j).transpose();
  }

  StepFunction G = censoring_km(times, events);
  std::vector<ScoreCurve> ms = multistate_brier(pred, ds, G, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double total = 0.0;
    for (int j = 0; j < S; ++j) total += ms[j].values[g];
    double variance = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < S; ++j) {
        const double p = pred[j].eval(i, grid[g]);
        variance += p * (1.0 - p);
      }
    variance /= n;
    REQUIRE(std::abs(total - variance) < 0.04);
  }
}

TEST_CASE("squared error against truth reproduces a constant offset") {
  Rng rng(8);
  std::vector<double> rates(40);
  for (auto& r : rates) r = rng.uniform(0.3, 1.5);
  std::vector<double> axis = linspace(0.0, 4.0, 30);
  CurveSet s = exp_curves(rates, axis);
  CurveSet f = s;
  f.values = 1.0 - s.values.array();

  std::vector<double> grid = linspace(0.2, 3.5, 11);
  TruthBrier zero = brier_vs_truth({s, f}, {s, f}, grid);
  REQUIRE(zero.values.maxCoeff() == 0.0);
  REQUIRE(zero.time_averaged.maxCoeff() == 0.0);

  CurveSet s_off = s, f_off = f;
  s_off.values = s.values.array() + 0.1;
  f_off.values = f.values.array() + 0.1;
  TruthBrier off = brier_vs_truth({s_off, f_off}, {s, f}, grid);
  for (Eigen::Index r = 0; r < off.values.rows(); ++r)
    for (Eigen::Index c = 0; c < off.values.cols(); ++c)
      REQUIRE(off.values(r, c) == Catch::Approx(0.01).margin(1e-12));
  REQUIRE(off.time_averaged[0] == Catch::Approx(0.01).margin(1e-12));

  CurveSet extra = s;
  REQUIRE_THROWS_AS(brier_vs_truth({s}, {s, f}, grid), std::invalid_argument);
}

TEST_CASE("band coverage counts boundary hits") {
  std::vector<MatrixXd> truth = {MatrixXd::Constant(3, 2, 0.4), MatrixXd::Constant(3, 2, 0.9)};
  std::vector<MatrixXd> zero = {MatrixXd::Zero(3, 2), MatrixXd::Zero(3, 2)};
  std::vector<MatrixXd> one = {MatrixXd::Ones(3, 2), MatrixXd::Ones(3, 2)};
  REQUIRE(interval_coverage(zero, one, truth) == 1.0);
  REQUIRE(interval_coverage(truth, truth, truth) == 1.0);

  std::vector<MatrixXd> half_hi = {MatrixXd::Constant(3, 2, 0.5), MatrixXd::Constant(3, 2, 0.5)};
  REQUIRE(interval_coverage(zero, half_hi, truth) == 0.5);

  std::vector<MatrixXd> bad = {MatrixXd::Zero(2, 2), MatrixXd::Zero(3, 2)};
  REQUIRE_THROWS_AS(interval_coverage(bad, one, truth), std::invalid_argument);
}

TEST_CASE("integrated scores are stable under grid refinement") {
  Rng rng(55);
  const int n = 120;
  std::vector<double> times(n), rates(n);
  std::vector<int> events(n);
  for (int i = 0; i < n; ++i) {
    times[i] = rng.exponential(0.9);
    events[i] = rng.uniform01() < 0.75 ? 1 : 0;
    rates[i] = rng.uniform(0.4, 1.8);
  }
  CurveSet pred = exp_curves(rates, linspace(0.0, 8.0, 60));
  StepFunction G = censoring_km(times, events);
  std::vector<double> event_times;
  for (int i = 0; i < n; ++i)
    if (events[i]) event_times.push_back(times[i]);
  const double lo = empirical_quantile(event_times, 0.01);
  const double hi = empirical_quantile(event_times, 0.99);
  ScoreCurve coarse = brier_ipcw(pred, times, events, G, linspace(lo, hi, 100));
  ScoreCurve fine = brier_ipcw(pred, times, events, G, linspace(lo, hi, 1000));
  REQUIRE(std::abs(coarse.integrated - fine.integrated) < 1e-3);
  ScoreCurve lc = ibll(pred, times, events, G, linspace(lo, hi, 100));
  ScoreCurve lf = ibll(pred, times, events, G, linspace(lo, hi, 1000));
  REQUIRE(std::abs(lc.integrated - lf.integrated) < 1e-3);
}
