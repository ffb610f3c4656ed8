#include "domex/experiments.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "domex/config.hpp"
#include "domex/error.hpp"

namespace {

using namespace domex;

PipelineSettings small(std::uint64_t seed = 0) {
  RunConfig c;
  c.set("run.seed", std::to_string(seed));
  c.set("task.domains", "4");
  c.set("synth.images_per_prompt", "6");
  c.set("filter.prototype_count", "8");
  c.set("grid.size", "136");
  c.set("grid.bias_levels", "17");
  return pipeline_settings(c);
}

TEST(Pipeline, DeterministicEndToEnd) {
  const auto a = run_mock_pipeline(small(4));
  const auto b = run_mock_pipeline(small(4));
  EXPECT_EQ(to_jsonl(a.manifest), to_jsonl(b.manifest));
  EXPECT_EQ(a.hypothesis, b.hypothesis);
  EXPECT_EQ(a.population_risk, b.population_risk);
  EXPECT_EQ(a.manifest.size(), 2u * 4u * 6u);
  EXPECT_EQ(a.prompts.items.front().prompt_text,
            render_template_prompt(a.prompts.items.front().class_name,
                                   a.prompts.items.front().domain));
}

TEST(Pipeline, ThreadCountDoesNotChangeResults) {
  auto s = small(5);
  const auto a = run_mock_pipeline(s);
  s.threads = 3;
  const auto b = run_mock_pipeline(s);
  EXPECT_EQ(to_jsonl(a.manifest), to_jsonl(b.manifest));
  EXPECT_EQ(a.hypothesis, b.hypothesis);
}

TEST(Pipeline, BeatsConstantClassifierAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = small(seed);
    const auto out = run_mock_pipeline(s);
    EXPECT_LT(out.population_risk, constant_classifier_risk(s.mu)) << "seed " << seed;
  }
}

TEST(Pipeline, DataFreeGroupsFollowExtrapolatedDomains) {
  const auto out = run_mock_pipeline(small(1));
  ASSERT_EQ(out.knowledge.entries.size(), 2u);
  // Class-wise lists may overlap, so groups are bounded by the union.
  EXPECT_GE(out.data.size(), 4u);
  EXPECT_LE(out.data.size(), 8u);
}

TEST(Pipeline, GdEmaTrainingPath) {
  auto s = small(2);
  s.train.mode = TrainMode::gd_ema;
  s.train.steps = 200;
  s.train.ema_decay = 0.9;
  const auto out = run_mock_pipeline(s);
  EXPECT_LT(out.population_risk, 0.5);
}

TEST(Control, SingleUnnamedDomain) {
  const auto out = run_class_template_control(small(3), 32);
  EXPECT_EQ(out.prompts.items.size(), 2u);
  EXPECT_EQ(out.prompts.items[0].prompt_text, "An image of dog");
  EXPECT_EQ(out.manifest.size(), 64u);
}

TEST(ConstantClassifier, MajorityClassError) {
  MetaDistributionSpec mu;
  EXPECT_EQ(constant_classifier_risk(mu), 0.5);
  mu.label_prior = {0.7, 0.3};
  EXPECT_NEAR(constant_classifier_risk(mu), 0.3, 1e-15);
}

TEST(SeparatingDirection, UnitVectorBetweenMeans) {
  MetaDistributionSpec mu;
  const auto d = class_separating_direction(mu);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_NEAR(d[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(d[1], -1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Variance, DeterministicTrainingStageHasZeroSpread) {
  const auto r = run_variance(small(6), 3, {VarianceStage::training});
  ASSERT_EQ(r.summaries.size(), 1u);
  EXPECT_EQ(r.summaries[0].runs, 3u);
  EXPECT_EQ(r.summaries[0].std_dev, 0.0);
  EXPECT_EQ(r.rows.size(), 3u);
}

TEST(Variance, SummariesMatchRows) {
  const auto r = run_variance(small(7), 3, {VarianceStage::synthesis, VarianceStage::all});
  ASSERT_EQ(r.summaries.size(), 2u);
  for (const auto& s : r.summaries) {
    std::vector<double> v;
    for (const auto& row : r.rows) {
      if (row.stage == s.stage) v.push_back(row.population_risk);
    }
    ASSERT_EQ(v.size(), 3u);
    const double mean = (v[0] + v[1] + v[2]) / 3.0;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(s.mean, mean, 1e-15);
    EXPECT_NEAR(s.std_dev, std::sqrt(ss / 2.0), 1e-15);
  }
  EXPECT_THROW(run_variance(small(), 1, {VarianceStage::all}), Error);
  EXPECT_EQ(parse_variance_stage("synthesis"), VarianceStage::synthesis);
  EXPECT_THROW(parse_variance_stage("filtering"), Error);
}

TEST(Scale, RowLayoutAndMedians) {
  ScaleConfig c;
  c.base = small(8);
  c.ladder = {2, 4};
  c.seeds = 2;
  c.images_per_domain = 16;
  const auto r = run_scale(c);
  EXPECT_EQ(r.rows.size(), 2u * 2u * 2u);
  ASSERT_EQ(r.median_extrapolated.size(), 2u);
  ASSERT_EQ(r.median_control.size(), 2u);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(row.arm == "extrapolated" || row.arm == "class-template");
    EXPECT_EQ(row.samples_per_class, row.n_domains * 16);
  }
}

TEST(Datafree, ReportsEpsilonPerRung) {
  DatafreeConfig c;
  c.base = small(9);
  c.offsets = {0.0, 0.5};
  c.seeds = 2;
  c.domains = 4;
  c.images_per_domain = 16;
  const auto r = run_datafree_eval(c);
  ASSERT_EQ(r.rungs.size(), 2u);
  EXPECT_EQ(r.rungs[0].epsilon, 0.0);
  EXPECT_GT(r.rungs[1].epsilon, 0.0);
  EXPECT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) EXPECT_EQ(row.samples, 2u * 4u * 16u);
}

}  // namespace
