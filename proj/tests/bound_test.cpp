#include "domex/bound.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "domex/error.hpp"
#include "domex/rng.hpp"
#include "oracles.hpp"

namespace {

using namespace domex;

RademacherOptions exact_mode() {
  RademacherOptions o;
  o.enumeration = EnumerationMode::always;
  return o;
}

TEST(Rademacher, SingletonClassIsZero) {
  const std::vector<double> profile{0.3, 0.9, 0.1, 0.7};
  EXPECT_EQ(rademacher_from_profile(profile, 1, 4, RademacherLevel::sample, exact_mode()).value,
            0.0);
  RademacherOptions mc;
  mc.enumeration = EnumerationMode::never;
  mc.sigma_draws = 101;
  EXPECT_EQ(rademacher_from_profile(profile, 1, 4, RademacherLevel::sample, mc).value, 0.0);
}

TEST(Rademacher, OneSampleTwoHypotheses) {
  const std::vector<double> profile{0.0, 1.0};
  const auto r = rademacher_from_profile(profile, 2, 1, RademacherLevel::sample, exact_mode());
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(r.value, oracle::rademacher_exact({{0.0}, {1.0}}));
  EXPECT_DOUBLE_EQ(r.value, 0.5);
}

TEST(Rademacher, TwoDomainsMirroredProfiles) {
  const std::vector<double> profile{0.0, 1.0, 1.0, 0.0};
  const auto r = rademacher_from_profile(profile, 2, 2, RademacherLevel::domain, exact_mode());
  EXPECT_DOUBLE_EQ(r.value, oracle::rademacher_exact({{0.0, 1.0}, {1.0, 0.0}}));
  EXPECT_DOUBLE_EQ(r.value, 0.25);
}

TEST(Rademacher, ExactMatchesOracleOnRandomProfiles) {
  Generator g(Stream(21));
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t members = 1 + g.below(6);
    const std::size_t units = 1 + g.below(10);
    std::vector<std::vector<double>> rows(members, std::vector<double>(units));
    std::vector<double> flat;
    for (auto& row : rows) {
      for (double& v : row) {
        v = g.uniform();
        flat.push_back(v);
      }
    }
    const auto r =
        rademacher_from_profile(flat, members, units, RademacherLevel::sample, exact_mode());
    EXPECT_NEAR(r.value, oracle::rademacher_exact(rows), 1e-12);
  }
}

TEST(Rademacher, MonteCarloWithinThreeStandardErrorsOfExact) {
  Generator g(Stream(22));
  const std::size_t members = 8, units = 10;
  std::vector<std::vector<double>> rows(members, std::vector<double>(units));
  std::vector<double> flat;
  for (auto& row : rows) {
    for (double& v : row) {
      v = g.below(2) ? 1.0 : 0.0;
      flat.push_back(v);
    }
  }
  RademacherOptions mc;
  mc.enumeration = EnumerationMode::never;
  mc.sigma_draws = 4096;
  mc.stream = 5;
  const auto est = rademacher_from_profile(flat, members, units, RademacherLevel::sample, mc);
  EXPECT_FALSE(est.exact);
  EXPECT_GT(est.std_error, 0.0);
  EXPECT_LE(std::abs(est.value - oracle::rademacher_exact(rows)), 3.0 * est.std_error);
}

TEST(Rademacher, SingleUnitMonteCarloIsExact) {
  const std::vector<double> profile{0.1, 0.7, 0.4};
  RademacherOptions mc;
  mc.enumeration = EnumerationMode::never;
  mc.sigma_draws = 64;
  const auto est = rademacher_from_profile(profile, 3, 1, RademacherLevel::domain, mc);
  EXPECT_EQ(est.std_error, 0.0);
  EXPECT_EQ(est.value,
            rademacher_from_profile(profile, 3, 1, RademacherLevel::domain, exact_mode()).value);
}

TEST(Rademacher, EnumerationRefusedAboveLimit) {
  const std::vector<double> profile(2 * 21, 0.5);
  try {
    rademacher_from_profile(profile, 2, 21, RademacherLevel::sample, exact_mode());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::resource);
  }
}

TEST(Rademacher, ProfileShapeChecked) {
  const std::vector<double> profile(5, 0.5);
  EXPECT_THROW(rademacher_from_profile(profile, 2, 3, RademacherLevel::sample, {}), Error);
}

TEST(Rademacher, NonNegativeAndThreadIndependent) {
  Generator g(Stream(23));
  std::vector<double> flat(16 * 40);
  for (double& v : flat) v = g.uniform();
  RademacherOptions a;
  a.sigma_draws = 257;
  a.stream = 3;
  RademacherOptions b = a;
  b.threads = 4;
  const auto ra = rademacher_from_profile(flat, 16, 40, RademacherLevel::sample, a);
  const auto rb = rademacher_from_profile(flat, 16, 40, RademacherLevel::sample, b);
  EXPECT_GE(ra.value, 0.0);
  EXPECT_EQ(ra.sigma_draws, 258u);
  EXPECT_EQ(ra.value, rb.value);
}

std::uint64_t derive(std::uint64_t seed, const char* label, int index) {
  return Stream(seed).child(label).child(static_cast<std::uint64_t>(index)).key();
}

HypothesisGrid random_grid(std::size_t size, std::uint64_t seed) {
  GridOptions o;
  o.size = size;
  o.construction = GridConstruction::seeded_random;
  o.seed = seed;
  return build_grid(o);
}

TEST(RademacherDomains, SingletonGridIsZero) {
  MetaDistributionSpec spec;
  const auto domains = sample_domains(spec, 6, 1);
  const HypothesisGrid grid({{{1.0, 0.0}, 0.0}}, GridOptions{});
  EXPECT_EQ(estimate_rademacher_domains(grid, spec, domains, 20, 2, {LossKind::ramp}, {}).value,
            0.0);
}

TEST(RademacherDomains, ShrinksLikeInverseRootN) {
  MetaDistributionSpec spec;
  const auto grid = random_grid(32, 4);
  auto average = [&](std::size_t n) {
    double s = 0.0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
      const auto domains = sample_domains(spec, n, derive(100, "domains", r));
      RademacherOptions o;
      o.sigma_draws = 512;
      o.enumeration = EnumerationMode::never;
      o.stream = derive(100, "sigma", r);
      s += estimate_rademacher_domains(grid, spec, domains, 50, derive(100, "eval", r),
                                       {LossKind::ramp}, o)
               .value;
    }
    return s / reps;
  };
  const double ratio = average(8) / average(32);
  EXPECT_GE(ratio, 1.6);
  EXPECT_LE(ratio, 2.4);
}

TEST(RademacherSamples, DecreasesWithSampleCount) {
  MetaDistributionSpec spec;
  const auto grid = random_grid(32, 5);
  auto estimate = [&](std::size_t m) {
    double s = 0.0;
    for (int r = 0; r < 20; ++r) {
      GroupedDataset data;
      const std::uint64_t stream = derive(200 + m, "data", r);
      for (const auto& d : sample_domains(spec, 4, stream)) {
        data.push_back({"d", sample_dataset(spec, d, m, stream)});
      }
      RademacherOptions o;
      o.sigma_draws = 256;
      o.stream = derive(200, "sigma", r);
      const auto e = estimate_rademacher_samples(grid, data, {LossKind::ramp}, o);
      EXPECT_GE(e.value, 0.0);
      s += e.value;
    }
    return s;
  };
  EXPECT_GT(estimate(5), estimate(80));
}

TEST(MetaDistance, IdenticalSpecsGiveZero) {
  MetaDistributionSpec mu;
  const auto d = estimate_meta_distance(mu, mu, random_grid(64, 1), {LossKind::ramp});
  EXPECT_TRUE(d.closed_form);
  EXPECT_EQ(d.value, 0.0);
}

TEST(MetaDistance, ThresholdSweepMatchesNormalCdfOracle) {
  MetaDistributionSpec mu;
  mu.dim = 1;
  mu.prototype_scale = 1.0;
  mu.noise_scale = 1.0;
  mu.domain_shift_scale = 0.0;
  PerturbationSpec p;
  p.prototype_offset = {0.5};
  const auto mu_prime = perturb_meta(mu, p);

  std::vector<Hypothesis> members;
  double expected = 0.0;
  // Class 0 sits at +1 with label sign +1; class 1 at -1.
  auto risk = [](double t, double shift) {
    return 0.5 * (oracle::phi(-t - 1.0 - shift) + oracle::phi(t - 1.0 + shift));
  };
  for (int i = 0; i <= 120; ++i) {
    const double t = -3.0 + 0.05 * i;
    members.push_back({{1.0}, t});
    expected = std::max(expected, std::abs(risk(t, 0.5) - risk(t, 0.0)));
  }
  const HypothesisGrid grid(members, GridOptions{1});
  const auto d = estimate_meta_distance(mu, mu_prime, grid, {LossKind::zero_one});
  EXPECT_NEAR(d.value, expected, 1e-7);
  const auto back = estimate_meta_distance(mu_prime, mu, grid, {LossKind::zero_one});
  EXPECT_EQ(d.value, back.value);
}

TEST(MetaDistance, DimensionMismatchRejected) {
  MetaDistributionSpec a, b;
  b.dim = 3;
  EXPECT_THROW(estimate_meta_distance(a, b, random_grid(4, 1), {LossKind::ramp}), Error);
}

TEST(MetaDistance, GrowsAlongOffsetLadder) {
  MetaDistributionSpec mu;
  const auto grid = random_grid(64, 2);
  double previous = -1.0;
  for (double offset : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    PerturbationSpec p;
    p.prototype_offset = {offset, -offset};
    const double d = estimate_meta_distance(mu, perturb_meta(mu, p), grid, {LossKind::ramp}).value;
    EXPECT_GE(d, previous);
    previous = d;
  }
}

TEST(Theorem1, AppendixVariantMatchesHandComputation) {
  BoundInputs in;
  in.empirical_risk = 0.12;
  in.n = 100;
  in.m = 100;
  in.delta = 0.05;
  const auto r = theorem1_bound(in);
  const double expected =
      0.12 + 3.0 * std::sqrt(std::log(40.0) / 20000.0) + 3.0 * std::sqrt(std::log(40.0) / 200.0);
  EXPECT_NEAR(r.bound_value, expected, 1e-14);
  EXPECT_EQ(recompute_bound(r), r.bound_value);
}

TEST(Theorem1, MainTextVariantUsesLargerDomainTerm) {
  BoundInputs in;
  in.n = 100;
  in.m = 100;
  in.variant = BoundVariant::main_text;
  EXPECT_NEAR(theorem1_bound(in).confidence_n, 3.0 * std::sqrt(std::log(40.0) / 100.0), 1e-14);
}

TEST(Theorem1, DecreasingInNAndM) {
  BoundInputs in;
  in.n = 8;
  in.m = 50;
  const double base = theorem1_bound(in).bound_value;
  in.n = 32;
  EXPECT_LT(theorem1_bound(in).bound_value, base);
  in.n = 8;
  in.m = 200;
  EXPECT_LT(theorem1_bound(in).bound_value, base);
}

TEST(Theorem1, EpsilonIsAdditive) {
  BoundInputs in;
  in.empirical_risk = 0.25;
  in.n = 10;
  in.m = 10;
  const double zero = theorem1_bound(in).bound_value;
  in.epsilon_true = 0.125;
  EXPECT_EQ(theorem1_bound(in).bound_value - zero, 0.125);
  in.epsilon_assumed = 0.0;
  EXPECT_EQ(theorem1_bound(in).bound_value, zero);
}

TEST(Theorem1, RejectsBadDelta) {
  for (double d : {0.0, 0.5, -0.1, std::nan("")}) {
    BoundInputs in;
    in.delta = d;
    EXPECT_THROW(theorem1_bound(in), Error) << d;
  }
  BoundInputs in;
  in.empirical_risk = std::numeric_limits<double>::infinity();
  EXPECT_THROW(theorem1_bound(in), Error);
}

BoundExperimentConfig small_experiment() {
  BoundExperimentConfig c;
  c.n = 4;
  c.m = 20;
  c.trials = 6;
  c.sigma_draws = 64;
  c.stream = 8;
  return c;
}

TEST(BoundExperiment, IdentityPerturbationHasZeroEpsilonInEveryRow) {
  const auto c = small_experiment();
  const auto r = bound_experiment(c, random_grid(16, 3));
  ASSERT_EQ(r.trials.size(), 6u);
  EXPECT_EQ(r.epsilon.value, 0.0);
  for (const auto& t : r.trials) {
    EXPECT_EQ(t.report.epsilon_used(), 0.0);
    EXPECT_EQ(t.violated, t.report.true_risk > t.report.bound_value);
  }
}

TEST(BoundExperiment, DeterministicAcrossThreads) {
  auto c = small_experiment();
  c.perturbation.prototype_offset = {0.2, 0.0};
  const auto grid = random_grid(16, 3);
  const auto a = bound_experiment(c, grid);
  c.threads = 3;
  const auto b = bound_experiment(c, grid);
  EXPECT_EQ(bound_trials_csv(a), bound_trials_csv(b));
  EXPECT_GT(a.epsilon.value, 0.0);
}

TEST(BoundExperiment, CsvHeader) {
  const auto csv = bound_trials_csv(bound_experiment(small_experiment(), random_grid(4, 1)));
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "trial,n,m,erm_index,empirical_risk,r_mn,r_mn_std_error,r_n,r_n_std_error,"
            "confidence_mn,confidence_n,epsilon,bound_value,true_risk,violated");
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), Error);
}

}  // namespace
