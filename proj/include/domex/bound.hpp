#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "domex/erm.hpp"
#include "domex/hypothesis.hpp"
#include "domex/meta_sim.hpp"

namespace domex {

enum class RademacherLevel { sample, domain };

struct RademacherEstimate {
  double value = 0.0;
  RademacherLevel level = RademacherLevel::sample;
  std::size_t sigma_draws = 0;
  bool exact = false;
  double std_error = 0.0;
};

enum class EnumerationMode { automatic, always, never };

struct RademacherOptions {
  // Number of sign vectors for Monte Carlo. Draws come in antithetic pairs
  // (sigma, -sigma), so an odd count is rounded up.
  std::size_t sigma_draws = 1024;
  EnumerationMode enumeration = EnumerationMode::automatic;
  std::uint64_t stream = 0;
  unsigned threads = 1;
};

// Automatic mode enumerates every sign vector when there are at most this
// many units; explicit enumeration is refused above kMaxEnumerationUnits.
inline constexpr std::size_t kAutoEnumerationUnits = 12;
inline constexpr std::size_t kMaxEnumerationUnits = 20;

/// Empirical Rademacher complexity of a finite class given its loss profile:
/// E_sigma max_r (1/units) sum_c sigma_c values[r * units + c].
///
/// Monte Carlo pairs every sign vector with its negation. Each pair contributes
/// (max_r s_r - min_r s_r) / 2 >= 0, which makes the estimate non-negative and
/// exactly 0 for a single-member class. The standard error is computed over
/// pair means.
RademacherEstimate rademacher_from_profile(std::span<const double> values,
                                           std::size_t members, std::size_t units,
                                           RademacherLevel level,
                                           const RademacherOptions& options);

/// Sample-level complexity R_mn over all n*m training samples.
RademacherEstimate estimate_rademacher_samples(const HypothesisGrid& grid,
                                               const GroupedDataset& data, LossFunction l,
                                               const RademacherOptions& options);

/// Domain-level complexity R_n over per-domain risks computed on held-out
/// evaluation samples (one group per domain).
RademacherEstimate estimate_rademacher_domains(const HypothesisGrid& grid,
                                               const GroupedDataset& held_out,
                                               LossFunction l,
                                               const RademacherOptions& options);

/// Same, drawing m_eval fresh samples per domain from `spec`.
RademacherEstimate estimate_rademacher_domains(const HypothesisGrid& grid,
                                               const MetaDistributionSpec& spec,
                                               std::span<const DomainSpec> domains,
                                               std::size_t m_eval, std::uint64_t eval_stream,
                                               LossFunction l,
                                               const RademacherOptions& options);

struct DistanceBudget {
  std::size_t n_eval = 200;
  std::size_t m_eval = 200;
  std::uint64_t stream = 0;
  unsigned threads = 1;
};

struct DistanceEstimate {
  double value = 0.0;
  bool closed_form = false;
  double std_error = 0.0;
  std::size_t argmax = 0;
};

/// max over grid members of |L^mu'(f) - L^mu(f)|. Uses closed-form risks for
/// binary tasks with ramp or zero-one loss, Monte Carlo otherwise (common
/// random numbers on both sides).
DistanceEstimate estimate_meta_distance(const MetaDistributionSpec& mu,
                                        const MetaDistributionSpec& mu_prime,
                                        const HypothesisGrid& grid, LossFunction l,
                                        const DistanceBudget& budget = {});

enum class BoundVariant { main_text, appendix };

const char* to_string(BoundVariant v) noexcept;
BoundVariant parse_bound_variant(const std::string& text);

struct BoundInputs {
  double empirical_risk = 0.0;
  RademacherEstimate r_mn;
  RademacherEstimate r_n;
  double delta = 0.05;
  double epsilon_true = 0.0;
  std::optional<double> epsilon_assumed;
  std::size_t n = 1;
  std::size_t m = 1;
  BoundVariant variant = BoundVariant::appendix;
};

struct BoundReport {
  double empirical_proxy_risk = 0.0;
  RademacherEstimate r_mn;
  RademacherEstimate r_n;
  double delta = 0.05;
  double epsilon_true = 0.0;
  std::optional<double> epsilon_assumed;
  double confidence_mn = 0.0;
  double confidence_n = 0.0;
  double bound_value = 0.0;
  double true_risk = 0.0;
  BoundVariant variant = BoundVariant::appendix;
  std::size_t n = 1;
  std::size_t m = 1;

  double epsilon_used() const { return epsilon_assumed.value_or(epsilon_true); }
};

// 3 sqrt(ln(2/delta) / (2mn))
double confidence_term_samples(double delta, std::size_t n, std::size_t m);
// 3 sqrt(ln(2/delta) / n) for main-text, 3 sqrt(ln(2/delta) / (2n)) for appendix.
double confidence_term_domains(double delta, std::size_t n, BoundVariant variant);

/// Assembles L + 2 r_mn + 2 r_n + confidence terms + epsilon. The true risk is
/// left at 0 for the caller to fill.
BoundReport theorem1_bound(const BoundInputs& in);

// Re-derives bound_value from the stored fields.
double recompute_bound(const BoundReport& report);

struct BoundExperimentConfig {
  MetaDistributionSpec mu;
  PerturbationSpec perturbation;
  std::size_t n = 10;
  std::size_t m = 50;
  std::size_t m_eval = 0;  // held-out samples per domain for R_n; 0 means m
  double delta = 0.05;
  std::size_t trials = 200;
  BoundVariant variant = BoundVariant::appendix;
  std::size_t sigma_draws = 1024;
  std::optional<double> epsilon_assumed;
  LossFunction loss{LossKind::ramp};
  std::uint64_t stream = 0;
  unsigned threads = 1;
};

struct BoundTrial {
  std::size_t trial = 0;
  std::size_t erm_index = 0;
  BoundReport report;
  bool violated = false;
};

struct BoundExperimentResult {
  std::vector<BoundTrial> trials;
  DistanceEstimate epsilon;
  double violation_rate = 0.0;
  double median_bound = 0.0;
  double median_true_risk = 0.0;
  double median_empirical_risk = 0.0;
};

/// Per trial: draw n domains x m samples from the proxy, run grid ERM, compute
/// both complexities, the measured distance and the bound, and score the
/// selected hypothesis against the reference distribution.
BoundExperimentResult bound_experiment(const BoundExperimentConfig& config,
                                       const HypothesisGrid& grid);

std::string bound_trials_csv(const BoundExperimentResult& result);
nlohmann::json bound_summary_json(const BoundExperimentResult& result,
                                  const BoundExperimentConfig& config, std::size_t grid_size);

double median(std::vector<double> values);

}  // namespace domex
