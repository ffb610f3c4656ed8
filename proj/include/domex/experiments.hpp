#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "domex/bound.hpp"
#include "domex/erm.hpp"
#include "domex/hypothesis.hpp"
#include "domex/meta_sim.hpp"
#include "domex/orchestrator.hpp"
#include "domex/synth.hpp"

namespace domex {

// Everything one hermetic pipeline run needs. Each stage draws only from its
// own seed.
struct PipelineSettings {
  TaskSpec task;
  QueryStrategy strategy = QueryStrategy::class_wise;
  PromptMode prompt_mode = PromptMode::template_prompt;
  MetaDistributionSpec mu;
  PerturbationSpec perturbation;
  std::size_t images_per_prompt = 8;
  bool filter_enabled = true;
  double filter_threshold = 0.2;
  std::size_t prototype_count = 64;
  GridOptions grid;
  LossFunction loss{LossKind::ramp};
  TrainConfig train;
  MockChatOptions chat;
  std::uint64_t extrapolation_seed = 0;
  std::uint64_t synthesis_seed = 0;
  std::uint64_t filter_seed = 0;
  std::uint64_t training_seed = 0;
  unsigned threads = 1;
};

// The proxy the mock image backend realizes: perturb(mu) keyed by the
// synthesis seed.
MetaDistributionSpec mock_world(const PipelineSettings& s);

// Trains on a grouped dataset per s.train (grid ERM, plain GD, or GD + EMA).
Hypothesis train_model(const PipelineSettings& s, const GroupedDataset& data);

struct PipelineOutcome {
  DomainKnowledge knowledge;
  PromptSet prompts;
  Manifest manifest;
  std::vector<RetentionRow> retention;
  GroupedDataset data;
  Hypothesis hypothesis;
  double empirical_risk = 0.0;
  double population_risk = 0.0;  // zero-one, closed form under mu
};

PipelineOutcome run_mock_pipeline(const PipelineSettings& s);

/// Same synthesis, filtering and training path, fed with one class-only
/// template prompt per class in a single unnamed domain.
PipelineOutcome run_class_template_control(const PipelineSettings& s,
                                           std::size_t images_per_class);

// Best constant classifier's zero-one risk under `spec`.
double constant_classifier_risk(const MetaDistributionSpec& spec);

struct ScaleConfig {
  PipelineSettings base;
  std::vector<std::size_t> ladder{2, 4, 8, 16, 32};
  std::size_t images_per_domain = 64;
  std::size_t seeds = 5;
};

struct ScaleRow {
  std::size_t seed_index = 0;
  std::size_t n_domains = 0;
  std::string arm;  // "extrapolated" or "class-template"
  std::size_t samples_per_class = 0;
  double retention_rate = 1.0;
  double population_risk = 0.0;
};

struct ScaleResult {
  std::vector<ScaleRow> rows;
  std::vector<double> median_extrapolated;  // per rung
  std::vector<double> median_control;
};

ScaleResult run_scale(const ScaleConfig& config);

enum class VarianceStage { extrapolation, synthesis, training, all };

const char* to_string(VarianceStage s) noexcept;
VarianceStage parse_variance_stage(const std::string& text);

struct VarianceRow {
  VarianceStage stage = VarianceStage::all;
  std::size_t repeat = 0;
  double population_risk = 0.0;
};

struct VarianceSummary {
  VarianceStage stage = VarianceStage::all;
  std::size_t runs = 0;
  double mean = 0.0;
  double std_dev = 0.0;  // sample standard deviation
};

struct VarianceResult {
  std::vector<VarianceRow> rows;
  std::vector<VarianceSummary> summaries;
};

/// Reruns the pipeline `repeats` times per stage, re-seeding only that stage.
VarianceResult run_variance(const PipelineSettings& base, std::size_t repeats,
                            const std::vector<VarianceStage>& stages);

struct DatafreeConfig {
  PipelineSettings base;
  // Prototype offsets applied along the class-separating direction.
  std::vector<double> offsets{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t seeds = 10;
  std::size_t domains = 8;
  std::size_t images_per_domain = 64;  // per class
  std::uint64_t baseline_seed = 0;
};

struct DatafreeRow {
  std::size_t seed_index = 0;
  double offset = 0.0;
  double epsilon = 0.0;
  double datafree_risk = 0.0;
  double supervised_risk = 0.0;
  std::size_t samples = 0;
};

struct DatafreeRung {
  double offset = 0.0;
  double epsilon = 0.0;
  double median_datafree = 0.0;
  double median_supervised = 0.0;
  double median_gap = 0.0;  // median over seeds of datafree - supervised
  double mean_gap = 0.0;
};

struct DatafreeResult {
  std::vector<DatafreeRow> rows;
  std::vector<DatafreeRung> rungs;
};

// Unit vector along which the first two class means differ.
std::vector<double> class_separating_direction(const MetaDistributionSpec& spec);

DatafreeResult run_datafree_eval(const DatafreeConfig& config);

}  // namespace domex
