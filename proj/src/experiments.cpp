#include "domex/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "domex/error.hpp"
#include "domex/parallel.hpp"
#include "domex/rng.hpp"

namespace domex {
namespace {

std::uint64_t derive(std::uint64_t seed, std::string_view label, std::size_t index) {
  return Stream(seed).child(label).child(index).key();
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double retention_of(const PipelineOutcome& o) {
  std::size_t total = 0, kept = 0;
  for (const auto& r : o.retention) {
    total += r.total;
    kept += r.kept;
  }
  return total == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(total);
}

OrchestratorOptions orchestrator_options(const PipelineSettings& s) {
  OrchestratorOptions o;
  o.stream = s.extrapolation_seed;
  o.sleeper = nullptr;
  o.in_flight = 1;
  return o;
}

PipelineOutcome finish_pipeline(const PipelineSettings& s, MockImageBackend& images,
                                PipelineOutcome out, std::size_t images_per_prompt) {
  SynthOptions so;
  so.stream = s.synthesis_seed;
  so.sleeper = nullptr;
  synthesize(out.prompts, images_per_prompt, images, so, out.manifest);
  if (s.filter_enabled) {
    const auto prototypes =
        template_prototypes(images, s.task.class_names(), s.prototype_count, s.filter_seed);
    out.retention = filter_by_similarity(out.manifest, prototypes, s.filter_threshold);
  }
  out.data = assemble_training_set(nullptr, out.manifest, Protocol::data_free,
                                   s.task.class_names());
  out.hypothesis = train_model(s, out.data);
  out.empirical_risk = empirical_risk(out.hypothesis, out.data, s.loss).value;
  out.population_risk = closed_form_risk(s.mu, out.hypothesis, LossFunction{LossKind::zero_one});
  return out;
}

std::size_t images_per_prompt_for(const PipelineSettings& s, std::size_t images_per_domain) {
  if (s.prompt_mode == PromptMode::template_prompt) return images_per_domain;
  require(images_per_domain % s.task.prompts_per_domain == 0, ErrorKind::config,
          "images per domain (" + std::to_string(images_per_domain) +
              ") must be divisible by prompts per domain (" +
              std::to_string(s.task.prompts_per_domain) + ")");
  return images_per_domain / s.task.prompts_per_domain;
}

}  // namespace

MetaDistributionSpec mock_world(const PipelineSettings& s) {
  MetaDistributionSpec world = perturb_meta(s.mu, s.perturbation);
  world.seed = s.synthesis_seed;
  return world;
}

Hypothesis train_model(const PipelineSettings& s, const GroupedDataset& data) {
  if (s.train.mode == TrainMode::grid_erm) {
    GridOptions g = s.grid;
    g.dim = s.mu.dim;
    return erm_grid(build_grid(g), data, s.loss).hypothesis;
  }
  TrainConfig c = s.train;
  c.seed = s.training_seed;
  GdResult r = train_gd_ema(c, data, s.loss);
  return s.train.mode == TrainMode::gd ? r.raw : r.ema;
}

PipelineOutcome run_mock_pipeline(const PipelineSettings& s) {
  s.task.validate();
  require(s.task.classes.size() == s.mu.class_count, ErrorKind::config,
          "task has " + std::to_string(s.task.classes.size()) + " classes but meta has " +
              std::to_string(s.mu.class_count));
  MockChatBackend chat(s.chat);
  const OrchestratorOptions o = orchestrator_options(s);

  PipelineOutcome out;
  out.knowledge = s.strategy == QueryStrategy::class_wise ? extrapolate_class_wise(s.task, chat, o)
                                                         : extrapolate_dataset_wise(s.task, chat, o);
  out.prompts = build_prompt_set(s.task, out.knowledge, s.prompt_mode, &chat, o);
  out.manifest = Manifest({s.task.task_name, reproducible_timestamp(), ""});
  MockImageBackend images(mock_world(s), s.task.class_names());
  return finish_pipeline(s, images, std::move(out), s.images_per_prompt);
}

PipelineOutcome run_class_template_control(const PipelineSettings& s,
                                           std::size_t images_per_class) {
  s.task.validate();
  PipelineOutcome out;
  for (const auto& c : s.task.classes) {
    out.prompts.items.push_back(
        {c.name, "", render_class_template_prompt(c.name), PromptMode::template_prompt});
  }
  out.manifest = Manifest({s.task.task_name, reproducible_timestamp(), ""});
  MockImageBackend images(mock_world(s), s.task.class_names());
  return finish_pipeline(s, images, std::move(out), images_per_class);
}

double constant_classifier_risk(const MetaDistributionSpec& spec) {
  const auto prior = label_prior_of(spec);
  return 1.0 - *std::max_element(prior.begin(), prior.end());
}

// ---------------------------------------------------------------------------

ScaleResult run_scale(const ScaleConfig& config) {
  require(!config.ladder.empty(), ErrorKind::config, "scale ladder is empty");
  require(config.seeds >= 1, ErrorKind::config, "scale needs at least one seed");
  const std::size_t rungs = config.ladder.size();
  const std::size_t jobs = config.seeds * rungs * 2;
  std::vector<ScaleRow> rows(jobs);

  parallel_for(jobs, config.base.threads, [&](std::size_t job) {
    const std::size_t seed_index = job / (rungs * 2);
    const std::size_t rung = (job / 2) % rungs;
    const bool control = job % 2 == 1;
    PipelineSettings s = config.base;
    s.extrapolation_seed = derive(config.base.extrapolation_seed, "scale", seed_index);
    s.synthesis_seed = derive(config.base.synthesis_seed, "scale", seed_index);
    s.filter_seed = derive(config.base.filter_seed, "scale", seed_index);
    s.training_seed = derive(config.base.training_seed, "scale", seed_index);
    s.task.domains_requested = config.ladder[rung];
    s.images_per_prompt = images_per_prompt_for(s, config.images_per_domain);
    const std::size_t per_class = config.ladder[rung] * config.images_per_domain;

    const PipelineOutcome o =
        control ? run_class_template_control(s, per_class) : run_mock_pipeline(s);
    rows[job] = {seed_index,       config.ladder[rung], control ? "class-template" : "extrapolated",
                 per_class,        retention_of(o),     o.population_risk};
  });

  ScaleResult result;
  result.rows = std::move(rows);
  for (std::size_t rung = 0; rung < rungs; ++rung) {
    std::vector<double> ext, ctl;
    for (const auto& r : result.rows) {
      if (r.n_domains != config.ladder[rung]) continue;
      (r.arm == "extrapolated" ? ext : ctl).push_back(r.population_risk);
    }
    result.median_extrapolated.push_back(median(ext));
    result.median_control.push_back(median(ctl));
  }
  return result;
}

// ---------------------------------------------------------------------------

const char* to_string(VarianceStage s) noexcept {
  switch (s) {
    case VarianceStage::extrapolation: return "extrapolation";
    case VarianceStage::synthesis: return "synthesis";
    case VarianceStage::training: return "training";
    case VarianceStage::all: return "all";
  }
  return "?";
}

VarianceStage parse_variance_stage(const std::string& text) {
  for (auto s : {VarianceStage::extrapolation, VarianceStage::synthesis, VarianceStage::training,
                 VarianceStage::all}) {
    if (text == to_string(s)) return s;
  }
  fail(ErrorKind::config, "unknown variance stage '" + text + "'");
}

VarianceResult run_variance(const PipelineSettings& base, std::size_t repeats,
                            const std::vector<VarianceStage>& stages) {
  require(repeats >= 2, ErrorKind::validation, "variance needs repeats >= 2");
  require(!stages.empty(), ErrorKind::validation, "variance needs at least one stage");
  const std::size_t jobs = stages.size() * repeats;
  std::vector<VarianceRow> rows(jobs);
  parallel_for(jobs, base.threads, [&](std::size_t job) {
    const VarianceStage stage = stages[job / repeats];
    const std::size_t r = job % repeats;
    PipelineSettings s = base;
    const bool all = stage == VarianceStage::all;
    if (all || stage == VarianceStage::extrapolation) {
      s.extrapolation_seed = derive(base.extrapolation_seed, "repeat", r);
    }
    if (all || stage == VarianceStage::synthesis) {
      s.synthesis_seed = derive(base.synthesis_seed, "repeat", r);
    }
    if (all || stage == VarianceStage::training) {
      s.training_seed = derive(base.training_seed, "repeat", r);
    }
    rows[job] = {stage, r, run_mock_pipeline(s).population_risk};
  });

  VarianceResult result;
  result.rows = std::move(rows);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    std::vector<double> risks;
    for (std::size_t r = 0; r < repeats; ++r) risks.push_back(result.rows[i * repeats + r].population_risk);
    const double mean =
        std::accumulate(risks.begin(), risks.end(), 0.0) / static_cast<double>(risks.size());
    result.summaries.push_back({stages[i], repeats, mean, sample_std(risks)});
  }
  return result;
}

// ---------------------------------------------------------------------------

std::vector<double> class_separating_direction(const MetaDistributionSpec& spec) {
  require(spec.class_count >= 2, ErrorKind::validation, "need at least two classes");
  auto a = class_mean(spec, 0);
  const auto b = class_mean(spec, 1);
  double norm = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    a[d] -= b[d];
    norm += a[d] * a[d];
  }
  norm = std::sqrt(norm);
  for (auto& x : a) x /= norm;
  return a;
}

DatafreeResult run_datafree_eval(const DatafreeConfig& config) {
  require(!config.offsets.empty(), ErrorKind::config, "datafree offset ladder is empty");
  require(config.seeds >= 1, ErrorKind::config, "datafree needs at least one seed");
  const PipelineSettings& base = config.base;
  const std::vector<double> direction = class_separating_direction(base.mu);
  const std::size_t rungs = config.offsets.size();

  auto perturbation_for = [&](double offset) {
    PerturbationSpec p = base.perturbation;
    std::vector<double> b = prototype_offset_of(perturb_meta(base.mu, base.perturbation));
    for (std::size_t d = 0; d < b.size(); ++d) b[d] += offset * direction[d];
    p.prototype_offset = b;
    return p;
  };

  GridOptions g = base.grid;
  g.dim = base.mu.dim;
  const HypothesisGrid grid = build_grid(g);
  std::vector<double> epsilons(rungs);
  for (std::size_t k = 0; k < rungs; ++k) {
    epsilons[k] = estimate_meta_distance(base.mu, perturb_meta(base.mu, perturbation_for(config.offsets[k])),
                                         grid, base.loss)
                      .value;
  }

  const std::size_t per_domain = config.images_per_domain * base.mu.class_count;
  std::vector<double> supervised(config.seeds);
  std::vector<double> datafree(config.seeds * rungs);
  parallel_for(config.seeds * (rungs + 1), base.threads, [&](std::size_t job) {
    const std::size_t i = job / (rungs + 1);
    const std::size_t k = job % (rungs + 1);
    PipelineSettings s = base;
    s.training_seed = derive(base.training_seed, "datafree", i);
    if (k == rungs) {
      MetaDistributionSpec mu = base.mu;
      mu.seed = derive(config.baseline_seed, "datafree", i);
      GroupedDataset data;
      for (const auto& d : sample_domains(mu, config.domains, 0)) {
        data.push_back({std::to_string(d.domain_id), sample_dataset(mu, d, per_domain, 0)});
      }
      supervised[i] = closed_form_risk(base.mu, train_model(s, data), LossFunction{LossKind::zero_one});
      return;
    }
    s.extrapolation_seed = derive(base.extrapolation_seed, "datafree", i);
    s.synthesis_seed = derive(base.synthesis_seed, "datafree", i);
    s.filter_seed = derive(base.filter_seed, "datafree", i);
    s.task.domains_requested = config.domains;
    s.images_per_prompt = images_per_prompt_for(s, config.images_per_domain);
    s.perturbation = perturbation_for(config.offsets[k]);
    datafree[i * rungs + k] = run_mock_pipeline(s).population_risk;
  });

  DatafreeResult result;
  for (std::size_t i = 0; i < config.seeds; ++i) {
    for (std::size_t k = 0; k < rungs; ++k) {
      result.rows.push_back({i, config.offsets[k], epsilons[k], datafree[i * rungs + k],
                             supervised[i], per_domain * config.domains});
    }
  }
  for (std::size_t k = 0; k < rungs; ++k) {
    std::vector<double> df, gaps;
    for (std::size_t i = 0; i < config.seeds; ++i) {
      df.push_back(datafree[i * rungs + k]);
      gaps.push_back(datafree[i * rungs + k] - supervised[i]);
    }
    const double mean_gap =
        std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
    result.rungs.push_back(
        {config.offsets[k], epsilons[k], median(df), median(supervised), median(gaps), mean_gap});
  }
  return result;
}

}  // namespace domex
