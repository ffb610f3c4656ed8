#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "domex/bound.hpp"
#include "domex/experiments.hpp"

namespace domex {

/// Effective configuration: every known key with its value, defaults filled
/// in. Keys are "section.name"; task classes are "task.class.<name>" and keep
/// file order.
class RunConfig {
 public:
  // Built-in defaults only.
  RunConfig();

  // Overlays an INI document. Unknown sections or keys are config errors.
  static RunConfig from_ini(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  std::string get_string(const std::string& key) const { return get(key); }
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_count(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::size_t> get_counts(const std::string& key) const;

  // A stage seed: the explicit "<section>.seed" when set, else derived from
  // run.seed and the section name.
  std::uint64_t stage_seed(const std::string& section) const;

  // Sorted "key = value" lines; run.out and run.threads are excluded since
  // they never change results.
  std::string canonical(const std::vector<std::string>& sections = {}) const;
  std::string digest(const std::vector<std::string>& sections = {}) const;

  const std::vector<std::pair<std::string, std::string>>& task_classes() const noexcept {
    return classes_;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, std::string>> classes_;
  bool classes_from_file_ = false;
};

MetaDistributionSpec meta_spec(const RunConfig& c);
PerturbationSpec perturbation_spec(const RunConfig& c);
GridOptions grid_options(const RunConfig& c);
TaskSpec task_spec(const RunConfig& c);
TrainConfig train_config(const RunConfig& c);
OrchestratorOptions orchestrator_options(const RunConfig& c);
MockChatOptions mock_chat_options(const RunConfig& c);
PipelineSettings pipeline_settings(const RunConfig& c);
BoundExperimentConfig bound_config(const RunConfig& c);
GridOptions bound_grid_options(const RunConfig& c);
ScaleConfig scale_config(const RunConfig& c);
DatafreeConfig datafree_config(const RunConfig& c);

// Sections whose values determine synthesized data.
const std::vector<std::string>& synthesis_sections();

}  // namespace domex
