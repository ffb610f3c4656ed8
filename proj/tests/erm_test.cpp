#include "domex/erm.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "domex/error.hpp"
#include "domex/rng.hpp"
#include "oracles.hpp"

namespace {

using namespace domex;

LabeledSample at(double x, std::size_t y, std::int64_t d = 0) { return {{x}, y, d}; }

const Hypothesis kIdentity{{1.0}, 0.0};
const LossFunction kZeroOne{LossKind::zero_one};

// Domain-balanced ramp risk, written independently of the library.
double balanced_ramp(const Hypothesis& h, const GroupedDataset& data) {
  double total = 0.0;
  for (const auto& g : data) {
    double s = 0.0;
    for (const auto& x : g.samples) {
      s += oracle::ramp(oracle::dot(h.weights, x.features) + h.bias, x.label == 0 ? 1 : -1);
    }
    total += s / g.samples.size();
  }
  return total / data.size();
}

GroupedDataset random_fixture(std::uint64_t seed, std::size_t n, std::size_t m) {
  MetaDistributionSpec spec;
  spec.seed = seed;
  GroupedDataset data;
  for (const auto& d : sample_domains(spec, n, 0)) {
    data.push_back({std::to_string(d.domain_id), sample_dataset(spec, d, m, 0)});
  }
  return data;
}

TEST(EmpiricalRisk, ZeroWhenAllCorrect) {
  const GroupedDataset data{{"a", {at(1.0, 0), at(-2.0, 1)}}};
  EXPECT_EQ(empirical_risk(kIdentity, data, kZeroOne).value, 0.0);
}

TEST(EmpiricalRisk, SingleDomainAverage) {
  const GroupedDataset data{{"a", {at(1.0, 0), at(1.0, 1)}}};
  EXPECT_EQ(empirical_risk(kIdentity, data, kZeroOne).value, 0.5);
}

TEST(EmpiricalRisk, DomainBalancedNotPooled) {
  const GroupedDataset data{{"a", {at(1.0, 1, 0), at(1.0, 1, 0)}},
                            {"b", {at(1.0, 0, 1), at(1.0, 0, 1), at(1.0, 0, 1), at(1.0, 0, 1)}}};
  const double pooled = (2.0 * 1 + 4.0 * 0) / 6.0;
  EXPECT_NEAR(pooled, 1.0 / 3.0, 1e-15);
  const auto r = empirical_risk(kIdentity, data, kZeroOne);
  EXPECT_EQ(r.value, 0.5);
  EXPECT_EQ(r.n_domains, 2u);
  EXPECT_EQ(r.kind, RiskKind::empirical);
}

TEST(EmpiricalRisk, EmptyRejected) {
  EXPECT_THROW(empirical_risk(kIdentity, GroupedDataset{}, kZeroOne), Error);
  EXPECT_THROW(empirical_risk(kIdentity, GroupedDataset{{"a", {}}}, kZeroOne), Error);
}

TEST(EmpiricalRisk, InvariantToDuplicatingADomain) {
  auto data = random_fixture(3, 4, 30);
  const Hypothesis h{{0.6, -0.8}, 0.1};
  const double before = empirical_risk(h, data, {LossKind::ramp}).value;
  auto copy = data[2].samples;
  data[2].samples.insert(data[2].samples.end(), copy.begin(), copy.end());
  EXPECT_NEAR(empirical_risk(h, data, {LossKind::ramp}).value, before, 1e-15);
}

TEST(GroupByDomain, FirstAppearanceOrder) {
  const std::vector<LabeledSample> samples{at(0, 0, 5), at(0, 1, 2), at(1, 0, 5)};
  const auto groups = group_by_domain(samples);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].samples.size(), 2u);
  EXPECT_EQ(groups[1].samples.front().domain_id, 2);
}

TEST(ErmGrid, SingletonGrid) {
  const HypothesisGrid grid({{{0.3, 0.4}, 0.2}}, GridOptions{});
  const auto r = erm_grid(grid, random_fixture(1, 2, 10), {LossKind::ramp});
  EXPECT_EQ(r.index, 0u);
  EXPECT_EQ(r.hypothesis, grid[0]);
}

TEST(ErmGrid, RealizableCaseFindsBayesRule) {
  const GroupedDataset data{{"a", {at(2.0, 0), at(-2.0, 1), at(3.0, 0)}}, {"b", {at(-1.5, 1)}}};
  const HypothesisGrid grid({{{-1.0}, 0.0}, {{1.0}, 5.0}, {{1.0}, 0.0}}, GridOptions{1});
  const auto r = erm_grid(grid, data, kZeroOne);
  EXPECT_EQ(r.index, 2u);
  EXPECT_EQ(r.risk.value, 0.0);
}

TEST(ErmGrid, TiesGoToLowestIndex) {
  const GroupedDataset data{{"a", {at(1.0, 0)}}};
  const HypothesisGrid grid({{{1.0}, 0.0}, {{2.0}, 0.0}}, GridOptions{1});
  EXPECT_EQ(erm_grid(grid, data, kZeroOne).index, 0u);
}

TEST(ErmGrid, MatchesBruteForceOnRandomFixtures) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GridOptions o;
    o.size = 32;
    o.construction = GridConstruction::seeded_random;
    o.seed = seed;
    const auto grid = build_grid(o);
    const auto data = random_fixture(seed + 100, 3, 15);
    std::vector<double> risks;
    for (const auto& h : grid.members()) risks.push_back(balanced_ramp(h, data));
    const auto r = erm_grid(grid, data, {LossKind::ramp});
    EXPECT_EQ(r.index, oracle::argmin(risks)) << "seed " << seed;
    for (double v : risks) EXPECT_LE(r.risk.value, v + 1e-12);
  }
}

TEST(GdEma, ZeroDecayTracksRawWeights) {
  TrainConfig c;
  c.mode = TrainMode::gd_ema;
  c.ema_decay = 0.0;
  c.steps = 50;
  c.record_trajectory = true;
  const auto r = train_gd_ema(c, random_fixture(4, 3, 20), {LossKind::ramp});
  ASSERT_EQ(r.trajectory.size(), 51u);
  for (std::size_t t = 0; t < r.trajectory.size(); ++t) {
    EXPECT_EQ(r.trajectory[t], r.ema_trajectory[t]);
  }
  EXPECT_EQ(r.raw, r.ema);
}

TEST(GdEma, OneStepUnrolling) {
  TrainConfig c;
  c.mode = TrainMode::gd_ema;
  c.ema_decay = 0.9;
  c.steps = 1;
  c.record_trajectory = true;
  const auto r = train_gd_ema(c, random_fixture(5, 2, 10), {LossKind::ramp});
  const auto t0 = flatten(r.trajectory[0]);
  const auto t1 = flatten(r.trajectory[1]);
  const auto e = flatten(r.ema);
  for (std::size_t k = 0; k < e.size(); ++k) EXPECT_NEAR(e[k], 0.9 * t0[k] + 0.1 * t1[k], 1e-15);
}

TEST(GdEma, SeparableFixtureReachesZeroTrainingError) {
  GroupedDataset data{{"a", {}}, {"b", {}}};
  Generator g(Stream(6));
  for (int i = 0; i < 20; ++i) {
    const std::size_t y = i % 2;
    const double s = y == 0 ? 1.0 : -1.0;
    data[i % 2 == 0 ? 0 : 1].samples.push_back(
        {{s * (1.0 + g.uniform()), s * (0.5 + g.uniform())}, y, i % 2});
  }
  // Perceptron confirms the fixture is linearly separable.
  std::vector<double> w{0, 0, 0};
  bool converged = false;
  for (int epoch = 0; epoch < 1000 && !converged; ++epoch) {
    converged = true;
    for (const auto& grp : data) {
      for (const auto& x : grp.samples) {
        const int y = x.label == 0 ? 1 : -1;
        if (y * (w[0] * x.features[0] + w[1] * x.features[1] + w[2]) <= 0) {
          w[0] += y * x.features[0];
          w[1] += y * x.features[1];
          w[2] += y;
          converged = false;
        }
      }
    }
  }
  ASSERT_TRUE(converged);

  TrainConfig c;
  c.mode = TrainMode::gd;
  c.learning_rate = 0.1;
  c.steps = 500;
  c.batch_size = 8;
  const auto r = train_gd_ema(c, data, kZeroOne);
  EXPECT_EQ(empirical_risk(r.raw, data, kZeroOne).value, 0.0);
}

TEST(GdEma, Deterministic) {
  TrainConfig c;
  c.mode = TrainMode::gd_ema;
  c.steps = 100;
  c.seed = 9;
  const auto data = random_fixture(7, 3, 20);
  const auto a = train_gd_ema(c, data, {LossKind::ramp});
  const auto b = train_gd_ema(c, data, {LossKind::ramp});
  EXPECT_EQ(a.ema, b.ema);
  EXPECT_EQ(a.curve.size(), b.curve.size());
}

TEST(GdEma, OverflowReportsDivergenceStep) {
  const GroupedDataset data{{"a", {{{1e300}, 1, 0}}}};
  TrainConfig c;
  c.mode = TrainMode::gd;
  c.learning_rate = 1e300;
  c.batch_size = 1;
  try {
    train_gd_ema(c, data, kZeroOne);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(TrainConfig, RejectsDecayOfOne) {
  TrainConfig c;
  c.ema_decay = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Ema, UnrolledMatchesRecursive) {
  Generator g(Stream(10));
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t steps = 1 + g.below(400);
    const double decay = trial == 0 ? 0.0 : g.uniform();
    std::vector<std::vector<double>> traj;
    traj.push_back({0.0, 0.0, 0.0});
    for (std::size_t t = 0; t < steps; ++t) traj.push_back({g.normal(), g.normal(), 5 * g.normal()});
    const auto rec = ema_recursive(traj, decay);
    const auto unrolled = ema_unrolled(traj, decay);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(rec.back()[k], unrolled[k], 1e-10);
  }
}

TEST(PopulationRiskMc, ConstantLossHypothesis) {
  MetaDistributionSpec spec;
  const Hypothesis zero{{0.0, 0.0}, 0.0};
  EXPECT_EQ(population_risk_mc(spec, zero, kZeroOne, 5, 10, 0).value, 1.0);
  EXPECT_EQ(population_risk_mc(spec, zero, {LossKind::ramp}, 5, 10, 0).value, 0.5);
}

TEST(PopulationRiskMc, DeterministicAcrossThreadCounts) {
  MetaDistributionSpec spec;
  const Hypothesis h{{0.7, -0.7}, 0.0};
  const auto a = population_risk_mc(spec, h, kZeroOne, 40, 50, 3, 1);
  const auto b = population_risk_mc(spec, h, kZeroOne, 40, 50, 3, 4);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.std_error, b.std_error);
  EXPECT_EQ(a.kind, RiskKind::population_mc);
}

}  // namespace
