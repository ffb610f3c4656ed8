#include "domex/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "domex/error.hpp"
#include "domex/hashing.hpp"
#include "domex/report.hpp"
#include "domex/rng.hpp"

namespace domex {
namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table = {
      {"run.seed", "0"},
      {"run.out", "out"},
      {"run.backend", "mock"},
      {"run.threads", "1"},

      {"meta.dim", "2"},
      {"meta.class_count", "2"},
      {"meta.prototype_scale", "2"},
      {"meta.domain_shift_scale", "0.5"},
      {"meta.noise_scale", "0.5"},
      {"meta.label_prior", ""},
      {"meta.seed", ""},

      {"perturb.prototype_offset", ""},
      {"perturb.shift_scale_factor", "1"},
      {"perturb.noise_scale_factor", "1"},

      {"grid.construction", "sphere-grid"},
      {"grid.size", "544"},
      {"grid.bias_levels", "17"},
      {"grid.bias_range", "2"},
      {"grid.weight_cap", "1"},
      {"grid.seed", ""},

      {"train.mode", "grid-erm"},
      {"train.loss", "ramp"},
      {"train.protocol", "data-free"},
      {"train.learning_rate", "0.1"},
      {"train.steps", "500"},
      {"train.ema_decay", "0.999"},
      {"train.batch_size", "32"},
      {"train.curve_every", "0"},
      {"train.real_domains", "4"},
      {"train.real_samples", "64"},
      {"train.seed", ""},

      {"bound.n", "10"},
      {"bound.m", "50"},
      {"bound.m_eval", "0"},
      {"bound.delta", "0.05"},
      {"bound.trials", "200"},
      {"bound.variant", "appendix"},
      {"bound.sigma_draws", "1024"},
      {"bound.epsilon_assumed", ""},
      {"bound.loss", "ramp"},
      {"bound.grid_size", "64"},
      {"bound.grid_bias_levels", "4"},
      {"bound.grid_bias_range", "1"},
      {"bound.prototype_offset", "0.1,-0.1"},
      {"bound.shift_scale_factor", "1.2"},
      {"bound.noise_scale_factor", "1"},
      {"bound.seed", ""},

      {"task.name", "pets"},
      {"task.domains", "8"},
      {"task.prompts_per_domain", "8"},

      {"orchestrator.strategy", "class-wise"},
      {"orchestrator.prompt_mode", "template"},
      {"orchestrator.temperature", ""},
      {"orchestrator.max_requery", "3"},
      {"orchestrator.in_flight", "1"},
      {"orchestrator.endpoint", ""},
      {"orchestrator.model", ""},
      {"orchestrator.response_path", "/choices/0/message/content"},
      {"orchestrator.timeout_seconds", "120"},
      {"orchestrator.retry_attempts", "4"},
      {"orchestrator.retry_initial_ms", "200"},
      {"orchestrator.retry_max_ms", "5000"},
      {"orchestrator.class_wise_role", ""},
      {"orchestrator.class_wise_task", ""},
      {"orchestrator.dataset_wise_role", ""},
      {"orchestrator.dataset_wise_task", ""},
      {"orchestrator.prompt_role", ""},
      {"orchestrator.prompt_task", ""},
      {"orchestrator.mock_duplicate_every", "0"},
      {"orchestrator.seed", ""},

      {"synth.images_per_prompt", "8"},
      {"synth.width", "512"},
      {"synth.height", "512"},
      {"synth.endpoint", ""},
      {"synth.images_field", "images"},
      {"synth.in_flight", "1"},
      {"synth.timeout_seconds", "300"},
      {"synth.seed", ""},

      {"filter.enabled", "true"},
      {"filter.threshold", "0.2"},
      {"filter.prototypes", ""},
      {"filter.prototype_count", "64"},
      {"filter.embed_endpoint", ""},
      {"filter.seed", ""},

      {"scale.ladder", "2,4,8,16,32"},
      {"scale.images_per_domain", "64"},
      {"scale.seeds", "5"},

      {"variance.repeats", "5"},
      {"variance.stage", "all"},

      {"datafree.offsets", "0,0.25,0.5,0.75,1"},
      {"datafree.seeds", "10"},
      {"datafree.domains", "8"},
      {"datafree.images_per_domain", "64"},
      {"datafree.strategy", "dataset-wise"},
      {"datafree.seed", ""},
  };
  return table;
}

const std::vector<std::pair<std::string, std::string>>& default_classes() {
  static const std::vector<std::pair<std::string, std::string>> classes = {
      {"dog", "a domesticated carnivorous mammal kept as a pet"},
      {"cat", "a small domesticated feline with soft fur"}};
  return classes;
}

std::string section_of(const std::string& key) { return key.substr(0, key.find('.')); }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  require(ec == std::errc() && ptr == end && !text.empty(), ErrorKind::config,
          key + ": cannot parse '" + text + "'");
  return value;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()), classes_(default_classes()) {}

RunConfig RunConfig::from_ini(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::config, std::string("config: ") + e.what());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    require(body.data().empty(), ErrorKind::config,
            "config: key '" + section + "' outside any section");
    const bool known = std::any_of(defaults().begin(), defaults().end(), [&](const auto& kv) {
      return section_of(kv.first) == section;
    });
    require(known, ErrorKind::config, "config: unknown section [" + section + "]");
    for (const auto& [name, value] : body) {
      const std::string key = section + "." + name;
      if (section == "task" && name.rfind("class.", 0) == 0) {
        const std::string class_name = name.substr(6);
        require(!class_name.empty(), ErrorKind::config, "config: empty class name");
        if (!config.classes_from_file_) {
          config.classes_.clear();
          config.classes_from_file_ = true;
        }
        config.classes_.emplace_back(class_name, value.data());
        continue;
      }
      config.set(key, value.data());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_ini(read_text_file(path));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  require(it != values_.end(), ErrorKind::config, "config: unknown key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  require(it != values_.end(), ErrorKind::config, "config: unknown key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const double v = parse_number<double>(key, get(key));
  require(std::isfinite(v), ErrorKind::config, key + " must be finite");
  return v;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  return parse_number<std::int64_t>(key, get(key));
}

std::size_t RunConfig::get_count(const std::string& key) const {
  return parse_number<std::size_t>(key, get(key));
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::config, key + ": expected true or false, got '" + v + "'");
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  if (get(key).empty()) return out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_number<double>(key, item));
  return out;
}

std::vector<std::size_t> RunConfig::get_counts(const std::string& key) const {
  std::vector<std::size_t> out;
  if (get(key).empty()) return out;
  for (const auto& item : split_list(get(key))) {
    out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

std::uint64_t RunConfig::stage_seed(const std::string& section) const {
  const std::string& explicit_seed = get(section + ".seed");
  if (!explicit_seed.empty()) return parse_number<std::uint64_t>(section + ".seed", explicit_seed);
  return Stream(get_u64("run.seed")).child(section).key();
}

std::string RunConfig::canonical(const std::vector<std::string>& sections) const {
  auto wanted = [&](const std::string& section) {
    return sections.empty() ||
           std::find(sections.begin(), sections.end(), section) != sections.end();
  };
  std::string out;
  for (const auto& [key, value] : values_) {
    if (key == "run.out" || key == "run.threads") continue;
    if (!wanted(section_of(key))) continue;
    out += key + " = " + value + "\n";
  }
  if (wanted("task")) {
    for (const auto& [name, definition] : classes_) {
      out += "task.class." + name + " = " + definition + "\n";
    }
  }
  return out;
}

std::string RunConfig::digest(const std::vector<std::string>& sections) const {
  return sha256_hex(canonical(sections));
}

const std::vector<std::string>& synthesis_sections() {
  static const std::vector<std::string> sections = {"run",  "meta",         "perturb",
                                                    "task", "orchestrator", "synth"};
  return sections;
}

// ---------------------------------------------------------------------------

MetaDistributionSpec meta_spec(const RunConfig& c) {
  MetaDistributionSpec s;
  s.dim = c.get_count("meta.dim");
  s.class_count = c.get_count("meta.class_count");
  s.prototype_scale = c.get_double("meta.prototype_scale");
  s.domain_shift_scale = c.get_double("meta.domain_shift_scale");
  s.noise_scale = c.get_double("meta.noise_scale");
  s.label_prior = c.get_doubles("meta.label_prior");
  s.seed = c.stage_seed("meta");
  s.validate();
  return s;
}

PerturbationSpec perturbation_spec(const RunConfig& c) {
  PerturbationSpec p;
  p.prototype_offset = c.get_doubles("perturb.prototype_offset");
  p.shift_scale_factor = c.get_double("perturb.shift_scale_factor");
  p.noise_scale_factor = c.get_double("perturb.noise_scale_factor");
  p.validate(c.get_count("meta.dim"));
  return p;
}

GridOptions grid_options(const RunConfig& c) {
  GridOptions g;
  g.dim = c.get_count("meta.dim");
  g.size = c.get_count("grid.size");
  g.construction = parse_grid_construction(c.get("grid.construction"));
  g.seed = c.stage_seed("grid");
  g.weight_cap = c.get_double("grid.weight_cap");
  g.bias_levels = c.get_count("grid.bias_levels");
  g.bias_range = c.get_double("grid.bias_range");
  return g;
}

TaskSpec task_spec(const RunConfig& c) {
  TaskSpec t;
  t.task_name = c.get("task.name");
  for (const auto& [name, definition] : c.task_classes()) t.classes.push_back({name, definition});
  t.domains_requested = c.get_count("task.domains");
  t.prompts_per_domain = c.get_count("task.prompts_per_domain");
  t.validate();
  return t;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.mode = parse_train_mode(c.get("train.mode"));
  t.learning_rate = c.get_double("train.learning_rate");
  t.steps = c.get_count("train.steps");
  t.ema_decay = c.get_double("train.ema_decay");
  t.batch_size = c.get_count("train.batch_size");
  t.curve_every = c.get_count("train.curve_every");
  t.seed = c.stage_seed("train");
  t.validate();
  return t;
}

OrchestratorOptions orchestrator_options(const RunConfig& c) {
  OrchestratorOptions o;
  auto segments = [&](const std::string& prefix, PromptSegments fallback) {
    std::optional<PromptSegments> out;
    const std::string& role = c.get("orchestrator." + prefix + "_role");
    const std::string& task = c.get("orchestrator." + prefix + "_task");
    if (role.empty() && task.empty()) return out;
    if (!role.empty()) fallback.role = role;
    if (!task.empty()) fallback.task_description = task;
    out = fallback;
    return out;
  };
  o.class_wise_segments = segments("class_wise", default_class_wise_segments());
  o.dataset_wise_segments = segments("dataset_wise", default_dataset_wise_segments());
  o.prompt_writer_segments = segments("prompt", default_prompt_writer_segments());
  if (!c.get("orchestrator.temperature").empty()) {
    o.temperature = c.get_double("orchestrator.temperature");
  }
  o.max_requery = c.get_count("orchestrator.max_requery");
  o.retry.max_attempts = c.get_count("orchestrator.retry_attempts");
  o.retry.initial_delay = std::chrono::milliseconds(c.get_int("orchestrator.retry_initial_ms"));
  o.retry.max_delay = std::chrono::milliseconds(c.get_int("orchestrator.retry_max_ms"));
  o.in_flight = std::max<std::size_t>(1, c.get_count("orchestrator.in_flight"));
  o.stream = c.stage_seed("orchestrator");
  return o;
}

MockChatOptions mock_chat_options(const RunConfig& c) {
  MockChatOptions m;
  m.duplicate_every = c.get_count("orchestrator.mock_duplicate_every");
  return m;
}

PipelineSettings pipeline_settings(const RunConfig& c) {
  PipelineSettings s;
  s.task = task_spec(c);
  s.strategy = parse_query_strategy(c.get("orchestrator.strategy"));
  s.prompt_mode = parse_prompt_mode(c.get("orchestrator.prompt_mode"));
  s.mu = meta_spec(c);
  s.perturbation = perturbation_spec(c);
  s.images_per_prompt = c.get_count("synth.images_per_prompt");
  s.filter_enabled = c.get_bool("filter.enabled");
  s.filter_threshold = c.get_double("filter.threshold");
  s.prototype_count = c.get_count("filter.prototype_count");
  s.grid = grid_options(c);
  s.loss = LossFunction{parse_loss_kind(c.get("train.loss"))};
  s.train = train_config(c);
  s.chat = mock_chat_options(c);
  s.extrapolation_seed = c.stage_seed("orchestrator");
  s.synthesis_seed = c.stage_seed("synth");
  s.filter_seed = c.stage_seed("filter");
  s.training_seed = c.stage_seed("train");
  s.threads = static_cast<unsigned>(std::max<std::size_t>(1, c.get_count("run.threads")));
  return s;
}

GridOptions bound_grid_options(const RunConfig& c) {
  GridOptions g = grid_options(c);
  g.size = c.get_count("bound.grid_size");
  g.bias_levels = c.get_count("bound.grid_bias_levels");
  g.bias_range = c.get_double("bound.grid_bias_range");
  return g;
}

BoundExperimentConfig bound_config(const RunConfig& c) {
  BoundExperimentConfig b;
  b.mu = meta_spec(c);
  b.perturbation.prototype_offset = c.get_doubles("bound.prototype_offset");
  b.perturbation.shift_scale_factor = c.get_double("bound.shift_scale_factor");
  b.perturbation.noise_scale_factor = c.get_double("bound.noise_scale_factor");
  b.perturbation.validate(b.mu.dim);
  b.n = c.get_count("bound.n");
  b.m = c.get_count("bound.m");
  b.m_eval = c.get_count("bound.m_eval");
  b.delta = c.get_double("bound.delta");
  b.trials = c.get_count("bound.trials");
  b.variant = parse_bound_variant(c.get("bound.variant"));
  b.sigma_draws = c.get_count("bound.sigma_draws");
  if (!c.get("bound.epsilon_assumed").empty()) {
    b.epsilon_assumed = c.get_double("bound.epsilon_assumed");
  }
  b.loss = LossFunction{parse_loss_kind(c.get("bound.loss"))};
  b.stream = c.stage_seed("bound");
  b.threads = static_cast<unsigned>(std::max<std::size_t>(1, c.get_count("run.threads")));
  return b;
}

ScaleConfig scale_config(const RunConfig& c) {
  ScaleConfig s;
  s.base = pipeline_settings(c);
  s.ladder = c.get_counts("scale.ladder");
  s.images_per_domain = c.get_count("scale.images_per_domain");
  s.seeds = c.get_count("scale.seeds");
  return s;
}

DatafreeConfig datafree_config(const RunConfig& c) {
  DatafreeConfig d;
  d.base = pipeline_settings(c);
  d.base.strategy = parse_query_strategy(c.get("datafree.strategy"));
  d.offsets = c.get_doubles("datafree.offsets");
  d.seeds = c.get_count("datafree.seeds");
  d.domains = c.get_count("datafree.domains");
  d.images_per_domain = c.get_count("datafree.images_per_domain");
  d.baseline_seed = c.stage_seed("datafree");
  return d;
}

}  // namespace domex
