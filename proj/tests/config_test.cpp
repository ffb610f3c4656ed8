#include "domex/config.hpp"

#include <gtest/gtest.h>

#include "domex/error.hpp"
#include "domex/rng.hpp"

namespace {

using namespace domex;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::usage;
}

TEST(RunConfig, DefaultsBuildValidSpecs) {
  const RunConfig c;
  const auto mu = meta_spec(c);
  EXPECT_EQ(mu.dim, 2u);
  EXPECT_EQ(mu.domain_shift_scale, 0.5);
  EXPECT_EQ(task_spec(c).class_names(), (std::vector<std::string>{"dog", "cat"}));
  EXPECT_EQ(build_grid(grid_options(c)).size(), 544u);
  EXPECT_EQ(bound_config(c).perturbation.prototype_offset, (std::vector<double>{0.1, -0.1}));
  EXPECT_EQ(scale_config(c).ladder, (std::vector<std::size_t>{2, 4, 8, 16, 32}));
}

TEST(RunConfig, IniOverlayAndClassOrder) {
  const auto c = RunConfig::from_ini(
      "[run]\nseed = 11\n[meta]\nnoise_scale = 0.25\n"
      "[task]\nname = instruments\nclass.guitar = a stringed instrument\n"
      "class.drum = a percussion instrument\n");
  EXPECT_EQ(c.get_u64("run.seed"), 11u);
  EXPECT_EQ(meta_spec(c).noise_scale, 0.25);
  const auto t = task_spec(c);
  EXPECT_EQ(t.task_name, "instruments");
  EXPECT_EQ(t.class_names(), (std::vector<std::string>{"guitar", "drum"}));
  EXPECT_EQ(t.classes[1].definition, "a percussion instrument");
}

TEST(RunConfig, UnknownKeysAndSectionsAreConfigErrors) {
  EXPECT_EQ(kind_of([] { RunConfig::from_ini("[meta]\ncolour = red\n"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { RunConfig::from_ini("[nonsense]\na = 1\n"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { RunConfig::from_ini("seed = 1\n"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { RunConfig::from_ini("[meta\n"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { RunConfig().set("run.nope", "1"); }), ErrorKind::config);
}

TEST(RunConfig, TypedGettersRejectGarbage) {
  RunConfig c;
  c.set("meta.dim", "two");
  EXPECT_EQ(kind_of([&] { c.get_count("meta.dim"); }), ErrorKind::config);
  c.set("meta.noise_scale", "inf");
  EXPECT_EQ(kind_of([&] { c.get_double("meta.noise_scale"); }), ErrorKind::config);
  c.set("filter.enabled", "maybe");
  EXPECT_EQ(kind_of([&] { c.get_bool("filter.enabled"); }), ErrorKind::config);
  c.set("filter.enabled", "no");
  EXPECT_FALSE(c.get_bool("filter.enabled"));
  c.set("scale.ladder", "2, 4,x");
  EXPECT_EQ(kind_of([&] { c.get_counts("scale.ladder"); }), ErrorKind::config);
}

TEST(RunConfig, StageSeeds) {
  RunConfig c;
  c.set("run.seed", "5");
  EXPECT_EQ(c.stage_seed("synth"), Stream(5).child("synth").key());
  EXPECT_NE(c.stage_seed("synth"), c.stage_seed("orchestrator"));
  c.set("synth.seed", "99");
  EXPECT_EQ(c.stage_seed("synth"), 99u);
}

TEST(RunConfig, DigestIgnoresOutputLocationAndThreads) {
  RunConfig a, b;
  b.set("run.out", "/elsewhere");
  b.set("run.threads", "8");
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(a.digest().size(), 64u);
  b.set("meta.noise_scale", "0.6");
  EXPECT_NE(a.digest(), b.digest());
}

TEST(RunConfig, SectionScopedDigest) {
  RunConfig a, b;
  b.set("train.steps", "7");
  EXPECT_EQ(a.digest(synthesis_sections()), b.digest(synthesis_sections()));
  b.set("synth.images_per_prompt", "3");
  EXPECT_NE(a.digest(synthesis_sections()), b.digest(synthesis_sections()));
  const auto canon = a.canonical({"task"});
  EXPECT_NE(canon.find("task.class.dog = "), std::string::npos);
  EXPECT_EQ(canon.find("meta."), std::string::npos);
}

TEST(RunConfig, InvalidValuesSurfaceFromBuilders) {
  RunConfig c;
  c.set("perturb.shift_scale_factor", "0");
  EXPECT_THROW(perturbation_spec(c), Error);
  c = RunConfig();
  c.set("orchestrator.strategy", "row-wise");
  EXPECT_EQ(kind_of([&] { pipeline_settings(c); }), ErrorKind::config);
}

TEST(RunConfig, PipelineSettingsCarryStageSeeds) {
  RunConfig c;
  c.set("run.seed", "3");
  const auto s = pipeline_settings(c);
  EXPECT_EQ(s.synthesis_seed, c.stage_seed("synth"));
  EXPECT_EQ(s.extrapolation_seed, c.stage_seed("orchestrator"));
  EXPECT_EQ(s.images_per_prompt, 8u);
  EXPECT_TRUE(s.filter_enabled);
}

}  // namespace
