// domex: command-line driver for the extrapolation pipeline, the bound
// simulator and the experiment protocols.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "domex/bound.hpp"
#include "domex/config.hpp"
#include "domex/erm.hpp"
#include "domex/error.hpp"
#include "domex/experiments.hpp"
#include "domex/orchestrator.hpp"
#include "domex/report.hpp"
#include "domex/synth.hpp"

namespace fs = std::filesystem;
using namespace domex;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> backend;
  std::optional<unsigned> threads;
  bool force = false;
  bool resume = false;
  std::optional<std::string> stage;
  std::optional<std::size_t> repeats;
};

struct Context {
  RunConfig config;
  fs::path out;
  bool force = false;
  bool mock = true;

  fs::path path(const std::string& name) const { return out / name; }
};

Context make_context(const Flags& flags) {
  Context ctx;
  if (!flags.config.empty()) {
    try {
      ctx.config = RunConfig::load(flags.config);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::missing_prerequisite) throw;
      fail(ErrorKind::config, "config file not found: " + flags.config);
    }
  }
  if (flags.seed) ctx.config.set("run.seed", std::to_string(*flags.seed));
  if (flags.out) ctx.config.set("run.out", *flags.out);
  if (flags.backend) ctx.config.set("run.backend", *flags.backend);
  if (flags.threads) ctx.config.set("run.threads", std::to_string(*flags.threads));
  const std::string backend = ctx.config.get("run.backend");
  require(backend == "mock" || backend == "http", ErrorKind::config,
          "run.backend must be mock or http, got '" + backend + "'");
  ctx.mock = backend == "mock";
  ctx.out = ctx.config.get("run.out");
  ctx.force = flags.force;
  return ctx;
}

void refuse_overwrite(const Context& ctx, std::initializer_list<std::string> names) {
  if (ctx.force) return;
  for (const auto& name : names) {
    require(!fs::exists(ctx.path(name)), ErrorKind::usage,
            "refusing to overwrite " + ctx.path(name).string() + " (pass --force)");
  }
}

fs::path prerequisite(const Context& ctx, const std::string& name, const std::string& producer) {
  const fs::path p = ctx.path(name);
  require(fs::exists(p), ErrorKind::missing_prerequisite,
          "missing prerequisite " + p.string() + " (run `domex " + producer + "` first)");
  return p;
}

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

std::unique_ptr<ChatBackend> chat_backend(const Context& ctx) {
  const RunConfig& c = ctx.config;
  if (ctx.mock) return std::make_unique<MockChatBackend>(mock_chat_options(c));
  HttpChatOptions o;
  o.endpoint = c.get("orchestrator.endpoint");
  o.model = c.get("orchestrator.model");
  o.response_path = c.get("orchestrator.response_path");
  o.timeout_seconds = static_cast<int>(c.get_int("orchestrator.timeout_seconds"));
  o.token = env_or_empty("DOMEX_LLM_TOKEN");
  require(!o.endpoint.empty() && !o.model.empty(), ErrorKind::config,
          "http backend needs orchestrator.endpoint and orchestrator.model");
  return std::make_unique<HttpChatBackend>(o);
}

void require_mock(const Context& ctx, const std::string& command) {
  require(ctx.mock, ErrorKind::unsupported, command + " runs only with the mock backend");
}

std::string pretty(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void append_line(std::ofstream& out, const std::string& line) {
  out << line;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::resource, "write failed");
}

// ---------------------------------------------------------------------------

int cmd_extrapolate(const Context& ctx) {
  refuse_overwrite(ctx, {"domain_knowledge.json", "exchanges.jsonl"});
  const TaskSpec task = task_spec(ctx.config);
  auto backend = chat_backend(ctx);
  OrchestratorOptions options = orchestrator_options(ctx.config);

  fs::create_directories(ctx.out);
  std::ofstream log(ctx.path("exchanges.jsonl"), std::ios::trunc);
  options.on_exchange = [&](const ChatExchange& e) {
    nlohmann::json j;
    to_json(j, e);
    append_line(log, j.dump() + "\n");
  };

  const auto strategy = parse_query_strategy(ctx.config.get("orchestrator.strategy"));
  const DomainKnowledge knowledge = strategy == QueryStrategy::class_wise
                                        ? extrapolate_class_wise(task, *backend, options)
                                        : extrapolate_dataset_wise(task, *backend, options);
  write_text_file(ctx.path("domain_knowledge.json"), pretty(to_json(knowledge)));
  std::cout << "wrote " << ctx.path("domain_knowledge.json").string() << " ("
            << knowledge.provenance.size() << " exchanges)\n";
  return 0;
}

int cmd_prompt(const Context& ctx) {
  const auto knowledge_path = prerequisite(ctx, "domain_knowledge.json", "extrapolate");
  refuse_overwrite(ctx, {"prompt_set.json"});
  const TaskSpec task = task_spec(ctx.config);
  const DomainKnowledge knowledge =
      domain_knowledge_from_json(nlohmann::json::parse(read_text_file(knowledge_path)));
  const PromptMode mode = parse_prompt_mode(ctx.config.get("orchestrator.prompt_mode"));

  std::unique_ptr<ChatBackend> backend;
  OrchestratorOptions options = orchestrator_options(ctx.config);
  std::ofstream log;
  if (mode == PromptMode::llm) {
    backend = chat_backend(ctx);
    log.open(ctx.path("prompt_exchanges.jsonl"), std::ios::trunc);
    options.on_exchange = [&](const ChatExchange& e) {
      nlohmann::json j;
      to_json(j, e);
      append_line(log, j.dump() + "\n");
    };
  }
  const PromptSet prompts = build_prompt_set(task, knowledge, mode, backend.get(), options);
  write_text_file(ctx.path("prompt_set.json"), pretty(to_json(prompts)));
  std::cout << "wrote " << ctx.path("prompt_set.json").string() << " (" << prompts.items.size()
            << " prompts)\n";
  return 0;
}

int cmd_synthesize(const Context& ctx, bool resume) {
  const auto prompt_path = prerequisite(ctx, "prompt_set.json", "prompt");
  const fs::path manifest_path = ctx.path("manifest.jsonl");
  if (!resume) refuse_overwrite(ctx, {"manifest.jsonl"});
  const RunConfig& c = ctx.config;
  const PipelineSettings settings = pipeline_settings(c);
  const PromptSet prompts = prompt_set_from_json(nlohmann::json::parse(read_text_file(prompt_path)));
  const std::string digest = c.digest(synthesis_sections());

  Manifest manifest({settings.task.task_name, reproducible_timestamp(), digest});
  const bool resuming = resume && fs::exists(manifest_path);
  if (resuming) {
    manifest = manifest_from_jsonl(read_text_file(manifest_path));
    require(manifest.header().config_digest == digest, ErrorKind::config,
            "cannot resume " + manifest_path.string() +
                ": it was written under a different configuration");
  }
  std::ofstream out(manifest_path, resuming ? std::ios::app : std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::resource, "cannot open " + manifest_path.string());
  if (!resuming) append_line(out, manifest_header_line(manifest.header()));

  std::unique_ptr<ImageBackend> backend;
  if (ctx.mock) {
    backend = std::make_unique<MockImageBackend>(mock_world(settings), settings.task.class_names());
  } else {
    HttpImageOptions o;
    o.endpoint = c.get("synth.endpoint");
    o.images_field = c.get("synth.images_field");
    o.timeout_seconds = static_cast<int>(c.get_int("synth.timeout_seconds"));
    o.token = env_or_empty("DOMEX_T2I_TOKEN");
    require(!o.endpoint.empty(), ErrorKind::config, "http backend needs synth.endpoint");
    backend = std::make_unique<HttpImageBackend>(o);
  }

  SynthOptions options;
  options.stream = settings.synthesis_seed;
  options.width = static_cast<int>(c.get_int("synth.width"));
  options.height = static_cast<int>(c.get_int("synth.height"));
  options.retry = orchestrator_options(c).retry;
  options.in_flight = std::max<std::size_t>(1, c.get_count("synth.in_flight"));
  options.image_dir = ctx.out.string();
  options.on_append = [&](const ManifestEntry& e) { append_line(out, manifest_entry_line(e)); };
  const std::size_t before = manifest.size();
  synthesize(prompts, settings.images_per_prompt, *backend, options, manifest);
  std::cout << "wrote " << manifest_path.string() << " (" << manifest.size() - before
            << " new entries, " << manifest.size() << " total)\n";
  return 0;
}

int cmd_filter(const Context& ctx) {
  const auto manifest_path = prerequisite(ctx, "manifest.jsonl", "synthesize");
  refuse_overwrite(ctx, {"manifest.filtered.jsonl", "retention.csv"});
  const RunConfig& c = ctx.config;
  const PipelineSettings settings = pipeline_settings(c);
  Manifest manifest = manifest_from_jsonl(read_text_file(manifest_path));

  ClassPrototypes prototypes;
  if (const std::string& file = c.get("filter.prototypes"); !file.empty()) {
    require(fs::exists(file), ErrorKind::missing_prerequisite, "missing prototypes file " + file);
    prototypes = prototypes_from_json(nlohmann::json::parse(read_text_file(file)));
  } else {
    require(ctx.mock, ErrorKind::config, "http backend needs filter.prototypes");
    MockImageBackend images(mock_world(settings), settings.task.class_names());
    prototypes = template_prototypes(images, settings.task.class_names(),
                                     settings.prototype_count, settings.filter_seed);
  }

  Embedder embedder;
  if (const std::string& endpoint = c.get("filter.embed_endpoint"); !endpoint.empty()) {
    auto client = std::make_shared<HttpEmbeddingClient>(
        HttpEmbeddingOptions{endpoint, env_or_empty("DOMEX_T2I_TOKEN"), 120});
    const fs::path root = ctx.out;
    embedder = [client, root](const ManifestEntry& e) {
      return client->embed({(root / std::get<PathPayload>(e.payload).path).string()}).at(0);
    };
  }

  const double threshold = settings.filter_enabled ? settings.filter_threshold : -1.0;
  const auto rows = filter_by_similarity(manifest, prototypes, threshold, embedder);
  write_text_file(ctx.path("manifest.filtered.jsonl"), to_jsonl(manifest));
  write_text_file(ctx.path("retention.csv"), retention_csv(rows));
  std::size_t kept = 0;
  for (const auto& r : rows) kept += r.kept;
  std::cout << "kept " << kept << " of " << manifest.size() << " entries at threshold "
            << format_double(threshold) << "\n";
  return 0;
}

int cmd_train(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const PipelineSettings settings = pipeline_settings(c);
  const std::string source =
      fs::exists(ctx.path("manifest.filtered.jsonl")) ? "manifest.filtered.jsonl" : "manifest.jsonl";
  const auto manifest_path = prerequisite(ctx, source, "synthesize");
  refuse_overwrite(ctx, {"hypothesis.json", "curves.csv", "train_report.json"});
  const Manifest manifest = manifest_from_jsonl(read_text_file(manifest_path));

  const Protocol protocol = parse_protocol(c.get("train.protocol"));
  std::optional<GroupedDataset> real;
  if (protocol != Protocol::data_free) {
    const std::size_t domains =
        protocol == Protocol::single_domain_augment ? 1 : c.get_count("train.real_domains");
    real.emplace();
    for (const auto& d : sample_domains(settings.mu, domains, 0)) {
      real->push_back({"real-" + std::to_string(d.domain_id),
                       sample_dataset(settings.mu, d, c.get_count("train.real_samples"), 0)});
    }
  }
  const GroupedDataset data = assemble_training_set(real ? &*real : nullptr, manifest, protocol,
                                                    settings.task.class_names());

  Hypothesis h;
  CsvTable curves({"step", "raw_risk", "ema_risk"});
  if (settings.train.mode == TrainMode::grid_erm) {
    h = train_model(settings, data);
    const double r = empirical_risk(h, data, settings.loss).value;
    curves.add_row({"0", format_double(r), format_double(r)});
  } else {
    TrainConfig tc = settings.train;
    tc.seed = settings.training_seed;
    const GdResult result = train_gd_ema(tc, data, settings.loss);
    h = settings.train.mode == TrainMode::gd ? result.raw : result.ema;
    for (const auto& p : result.curve) {
      curves.add_row({std::to_string(p.step), format_double(p.raw_risk), format_double(p.ema_risk)});
    }
  }

  std::size_t samples = 0;
  for (const auto& g : data) samples += g.samples.size();
  nlohmann::json hj;
  to_json(hj, h);
  const nlohmann::json report{
      {"config_digest", c.digest()},
      {"mode", to_string(settings.train.mode)},
      {"protocol", to_string(protocol)},
      {"n_domains", data.size()},
      {"samples", samples},
      {"empirical_risk", empirical_risk(h, data, settings.loss).value},
      {"population_risk_zero_one", closed_form_risk(settings.mu, h, LossFunction{LossKind::zero_one})},
      {"population_risk_ramp", closed_form_risk(settings.mu, h, LossFunction{LossKind::ramp})},
      {"constant_classifier_risk", constant_classifier_risk(settings.mu)},
      {"hypothesis", hj}};
  write_text_file(ctx.path("hypothesis.json"), pretty(hj));
  write_text_file(ctx.path("curves.csv"), curves.str());
  write_text_file(ctx.path("train_report.json"), pretty(report));
  std::cout << "population 0-1 risk " << format_double(report["population_risk_zero_one"])
            << " on " << data.size() << " domain groups\n";
  return 0;
}

int cmd_bound(const Context& ctx) {
  refuse_overwrite(ctx, {"bound_trials.csv", "bound_summary.json"});
  const BoundExperimentConfig config = bound_config(ctx.config);
  const HypothesisGrid grid = build_grid(bound_grid_options(ctx.config));
  const BoundExperimentResult result = bound_experiment(config, grid);
  nlohmann::json summary = bound_summary_json(result, config, grid.size());
  summary["config_digest"] = ctx.config.digest();
  write_text_file(ctx.path("bound_trials.csv"), bound_trials_csv(result));
  write_text_file(ctx.path("bound_summary.json"), pretty(summary));
  std::cout << "violation rate " << format_double(result.violation_rate) << ", median bound "
            << format_double(result.median_bound) << ", median true risk "
            << format_double(result.median_true_risk) << "\n";
  return 0;
}

int cmd_scale(const Context& ctx) {
  require_mock(ctx, "scale");
  refuse_overwrite(ctx, {"scale.csv", "scale.svg"});
  const ScaleConfig config = scale_config(ctx.config);
  const std::string digest = ctx.config.digest();
  const ScaleResult result = run_scale(config);

  CsvTable table({"experiment", "protocol", "arm", "seed_index", "n_domains", "m_per_domain",
                  "population_risk", "retention_rate", "config_digest"});
  for (const auto& r : result.rows) {
    table.add_row({"scale", "data-free", r.arm, std::to_string(r.seed_index),
                   std::to_string(r.arm == "extrapolated" ? r.n_domains : 1),
                   std::to_string(r.arm == "extrapolated" ? config.images_per_domain
                                                          : r.samples_per_class),
                   format_double(r.population_risk), format_double(r.retention_rate), digest});
  }
  std::vector<double> x(config.ladder.begin(), config.ladder.end());
  const std::vector<PlotSeries> series{{"extrapolated domains", x, result.median_extrapolated},
                                       {"class-template control", x, result.median_control}};
  PlotOptions plot;
  plot.title = "Population risk vs number of extrapolated domains";
  plot.x_label = "domains";
  plot.y_label = "median 0-1 risk";
  plot.log2_x = true;
  write_text_file(ctx.path("scale.csv"), table.str());
  write_text_file(ctx.path("scale.svg"), svg_line_plot(series, plot));
  for (std::size_t k = 0; k < config.ladder.size(); ++k) {
    std::cout << "n=" << config.ladder[k] << "  extrapolated "
              << format_double(result.median_extrapolated[k]) << "  control "
              << format_double(result.median_control[k]) << "\n";
  }
  return 0;
}

int cmd_variance(const Context& ctx, const Flags& flags) {
  require_mock(ctx, "variance");
  refuse_overwrite(ctx, {"variance.csv", "variance.json"});
  const RunConfig& c = ctx.config;
  const std::size_t repeats = flags.repeats.value_or(c.get_count("variance.repeats"));
  const std::string stage_text = flags.stage.value_or(c.get("variance.stage"));
  std::vector<VarianceStage> stages;
  std::istringstream in(stage_text);
  for (std::string s; std::getline(in, s, ',');) stages.push_back(parse_variance_stage(s));

  const std::string digest = c.digest();
  const VarianceResult result = run_variance(pipeline_settings(c), repeats, stages);
  CsvTable table({"experiment", "protocol", "stage", "repeat", "population_risk", "config_digest"});
  for (const auto& r : result.rows) {
    table.add_row({"variance", "data-free", to_string(r.stage), std::to_string(r.repeat),
                   format_double(r.population_risk), digest});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : result.summaries) {
    summary.push_back(
        {{"stage", to_string(s.stage)}, {"runs", s.runs}, {"mean", s.mean}, {"std", s.std_dev}});
    std::cout << to_string(s.stage) << ": " << format_double(s.mean) << " +- "
              << format_double(s.std_dev) << " over " << s.runs << " runs\n";
  }
  write_text_file(ctx.path("variance.csv"), table.str());
  write_text_file(ctx.path("variance.json"),
                  pretty({{"config_digest", digest}, {"repeats", repeats}, {"stages", summary}}));
  return 0;
}

int cmd_datafree_eval(const Context& ctx) {
  require_mock(ctx, "datafree-eval");
  refuse_overwrite(ctx, {"datafree.csv", "datafree.json"});
  const DatafreeConfig config = datafree_config(ctx.config);
  const std::string digest = ctx.config.digest();
  const DatafreeResult result = run_datafree_eval(config);

  CsvTable table({"experiment", "protocol", "seed_index", "offset", "epsilon", "n_domains",
                  "m_per_domain", "datafree_risk", "supervised_risk", "gap", "config_digest"});
  const std::size_t m = config.images_per_domain * config.base.mu.class_count;
  for (const auto& r : result.rows) {
    table.add_row({"datafree-eval", "data-free", std::to_string(r.seed_index),
                   format_double(r.offset), format_double(r.epsilon),
                   std::to_string(config.domains), std::to_string(m),
                   format_double(r.datafree_risk), format_double(r.supervised_risk),
                   format_double(r.datafree_risk - r.supervised_risk), digest});
  }
  nlohmann::json rungs = nlohmann::json::array();
  for (const auto& r : result.rungs) {
    rungs.push_back({{"offset", r.offset},
                     {"epsilon", r.epsilon},
                     {"median_datafree_risk", r.median_datafree},
                     {"median_supervised_risk", r.median_supervised},
                     {"median_gap", r.median_gap},
                     {"mean_gap", r.mean_gap}});
    std::cout << "offset " << format_double(r.offset) << "  eps " << format_double(r.epsilon)
              << "  data-free " << format_double(r.median_datafree) << "  supervised "
              << format_double(r.median_supervised) << "\n";
  }
  write_text_file(ctx.path("datafree.csv"), table.str());
  write_text_file(ctx.path("datafree.json"),
                  pretty({{"config_digest", digest}, {"seeds", config.seeds}, {"rungs", rungs}}));
  return 0;
}

void add_common_flags(CLI::App* cmd, Flags& flags) {
  cmd->add_option("--config", flags.config, "INI configuration file");
  cmd->add_option("--seed", flags.seed, "Global seed");
  cmd->add_option("--out", flags.out, "Output directory");
  cmd->add_option("--backend", flags.backend, "mock or http")
      ->check(CLI::IsMember({"mock", "http"}));
  cmd->add_option("--threads", flags.threads, "Worker cap; never changes results");
  cmd->add_flag("--force", flags.force, "Overwrite existing outputs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"domex: domain extrapolation pipeline and bound simulator"};
  app.require_subcommand(1);
  Flags flags;

  struct Command {
    const char* name;
    const char* help;
  };
  const std::vector<Command> commands = {
      {"extrapolate", "Query the language model for novel domains"},
      {"prompt", "Build generation prompts from extrapolated domains"},
      {"synthesize", "Generate samples for every prompt"},
      {"filter", "Score samples against class prototypes"},
      {"train", "Train on the synthesized data"},
      {"bound", "Run the generalization-bound experiment"},
      {"scale", "Risk vs number of extrapolated domains"},
      {"variance", "Per-stage variance decomposition"},
      {"datafree-eval", "Data-free training vs a supervised baseline"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common_flags(sub, flags);
    subs[c.name] = sub;
  }
  subs["synthesize"]->add_flag("--resume", flags.resume, "Append to an existing manifest");
  subs["variance"]->add_option("--stage", flags.stage,
                               "extrapolation, synthesis, training or all (comma list)");
  subs["variance"]->add_option("--repeats", flags.repeats, "Runs per stage (>= 2)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code_for(ErrorKind::usage);
  }

  try {
    const Context ctx = make_context(flags);
    const auto t0 = std::chrono::steady_clock::now();
    int rc = 0;
    if (subs["extrapolate"]->parsed()) rc = cmd_extrapolate(ctx);
    else if (subs["prompt"]->parsed()) rc = cmd_prompt(ctx);
    else if (subs["synthesize"]->parsed()) rc = cmd_synthesize(ctx, flags.resume);
    else if (subs["filter"]->parsed()) rc = cmd_filter(ctx);
    else if (subs["train"]->parsed()) rc = cmd_train(ctx);
    else if (subs["bound"]->parsed()) rc = cmd_bound(ctx);
    else if (subs["scale"]->parsed()) rc = cmd_scale(ctx);
    else if (subs["variance"]->parsed()) rc = cmd_variance(ctx, flags);
    else if (subs["datafree-eval"]->parsed()) rc = cmd_datafree_eval(ctx);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "wall time " << format_double(std::round(secs * 1000) / 1000) << " s\n";
    return rc;
  } catch (const Error& e) {
    std::cerr << "domex: " << to_string(e.kind()) << " error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "domex: malformed artifact: " << e.what() << "\n";
    return exit_code_for(ErrorKind::validation);
  } catch (const std::exception& e) {
    std::cerr << "domex: " << e.what() << "\n";
    return exit_code_for(ErrorKind::validation);
  }
}
