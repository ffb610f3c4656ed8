#include "domex/bound.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "domex/error.hpp"
#include "domex/parallel.hpp"
#include "domex/report.hpp"
#include "domex/rng.hpp"

namespace domex {
namespace {

// max_r s_r - min_r s_r for s_r = sum_c sigma_c values[r][c].
double spread(std::span<const double> values, std::size_t members, std::size_t units,
              std::span<const double> sigma) {
  double hi = -std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < members; ++r) {
    const double* row = values.data() + r * units;
    double s = 0.0;
    for (std::size_t c = 0; c < units; ++c) s += sigma[c] * row[c];
    hi = std::max(hi, s);
    lo = std::min(lo, s);
  }
  return hi - lo;
}

RademacherEstimate enumerate_exact(std::span<const double> values, std::size_t members,
                                   std::size_t units, RademacherLevel level) {
  // Gray-code walk over sign vectors whose last sign is +1; each is paired
  // with its negation.
  std::vector<double> sums(members, 0.0);
  for (std::size_t r = 0; r < members; ++r) {
    for (std::size_t c = 0; c < units; ++c) sums[r] += values[r * units + c];
  }
  std::vector<int> sigma(units, 1);
  auto pair_spread = [&] {
    const auto [lo, hi] = std::minmax_element(sums.begin(), sums.end());
    return *hi - *lo;
  };
  const std::uint64_t pairs = std::uint64_t{1} << (units - 1);
  double total = pair_spread();
  for (std::uint64_t k = 1; k < pairs; ++k) {
    const auto bit = static_cast<std::size_t>(std::countr_zero(k));
    sigma[bit] = -sigma[bit];
    for (std::size_t r = 0; r < members; ++r) {
      sums[r] += 2.0 * sigma[bit] * values[r * units + bit];
    }
    total += pair_spread();
  }
  RademacherEstimate out;
  out.level = level;
  out.exact = true;
  out.sigma_draws = static_cast<std::size_t>(2 * pairs);
  out.value = total / (2.0 * static_cast<double>(pairs)) / static_cast<double>(units);
  out.std_error = 0.0;
  return out;
}

}  // namespace

RademacherEstimate rademacher_from_profile(std::span<const double> values,
                                           std::size_t members, std::size_t units,
                                           RademacherLevel level,
                                           const RademacherOptions& options) {
  require(members >= 1 && units >= 1, ErrorKind::validation,
          "rademacher: need at least one member and one unit");
  require(values.size() == members * units, ErrorKind::validation,
          "rademacher: profile size does not match members x units");

  const bool exact = options.enumeration == EnumerationMode::always ||
                     (options.enumeration == EnumerationMode::automatic &&
                      units <= kAutoEnumerationUnits);
  if (exact) {
    require(units <= kMaxEnumerationUnits, ErrorKind::resource,
            "rademacher: exact enumeration refused for " + std::to_string(units) +
                " units (limit " + std::to_string(kMaxEnumerationUnits) + ")");
    return enumerate_exact(values, members, units, level);
  }

  require(options.sigma_draws >= 1, ErrorKind::validation,
          "rademacher: sigma_draws must be >= 1");
  const std::size_t pairs = (options.sigma_draws + 1) / 2;
  std::vector<double> pair_means(pairs);
  const Stream root(options.stream);
  parallel_for(pairs, options.threads, [&](std::size_t p) {
    Generator g(root.child(p));
    std::vector<double> sigma(units);
    std::uint64_t word = 0;
    for (std::size_t c = 0; c < units; ++c) {
      if (c % 64 == 0) word = g.next_u64();
      sigma[c] = (word >> (c % 64)) & 1 ? 1.0 : -1.0;
    }
    pair_means[p] = spread(values, members, units, sigma) / (2.0 * static_cast<double>(units));
  });

  double mean = 0.0;
  double var = 0.0;
  const auto [lo, hi] = std::minmax_element(pair_means.begin(), pair_means.end());
  if (*lo == *hi) {
    // Constant across draws (e.g. a single unit): exact, with no rounding noise.
    mean = *lo;
  } else {
    for (double v : pair_means) mean += v;
    mean /= static_cast<double>(pairs);
    for (double v : pair_means) var += (v - mean) * (v - mean);
  }

  RademacherEstimate out;
  out.level = level;
  out.exact = false;
  out.sigma_draws = 2 * pairs;
  out.value = mean;
  out.std_error = pairs > 1 ? std::sqrt(var / static_cast<double>(pairs - 1) /
                                        static_cast<double>(pairs))
                            : 0.0;
  return out;
}

RademacherEstimate estimate_rademacher_samples(const HypothesisGrid& grid,
                                               const GroupedDataset& data, LossFunction l,
                                               const RademacherOptions& options) {
  const LossMatrix matrix(grid, data, l);
  std::vector<double> values;
  values.reserve(matrix.members() * matrix.columns());
  for (std::size_t r = 0; r < matrix.members(); ++r) {
    const auto row = matrix.row(r);
    values.insert(values.end(), row.begin(), row.end());
  }
  return rademacher_from_profile(values, matrix.members(), matrix.columns(),
                                 RademacherLevel::sample, options);
}

RademacherEstimate estimate_rademacher_domains(const HypothesisGrid& grid,
                                               const GroupedDataset& held_out,
                                               LossFunction l,
                                               const RademacherOptions& options) {
  const LossMatrix matrix(grid, held_out, l);
  return rademacher_from_profile(matrix.group_means(), matrix.members(), held_out.size(),
                                 RademacherLevel::domain, options);
}

RademacherEstimate estimate_rademacher_domains(const HypothesisGrid& grid,
                                               const MetaDistributionSpec& spec,
                                               std::span<const DomainSpec> domains,
                                               std::size_t m_eval, std::uint64_t eval_stream,
                                               LossFunction l,
                                               const RademacherOptions& options) {
  require(!domains.empty(), ErrorKind::empty_request, "rademacher: no domains");
  GroupedDataset held_out;
  held_out.reserve(domains.size());
  for (const auto& d : domains) {
    held_out.push_back({"domain-" + std::to_string(d.domain_id),
                        sample_dataset(spec, d, m_eval, eval_stream)});
  }
  return estimate_rademacher_domains(grid, held_out, l, options);
}

DistanceEstimate estimate_meta_distance(const MetaDistributionSpec& mu,
                                        const MetaDistributionSpec& mu_prime,
                                        const HypothesisGrid& grid, LossFunction l,
                                        const DistanceBudget& budget) {
  mu.validate();
  mu_prime.validate();
  require(mu.dim == mu_prime.dim && mu.class_count == mu_prime.class_count,
          ErrorKind::validation, "meta distance: specs differ in dim or class_count");
  require(grid.members().front().dim() == mu.dim, ErrorKind::validation,
          "meta distance: grid dimension does not match the specs");

  DistanceEstimate out;
  const bool closed = mu.class_count == 2 && l.kind != LossKind::logistic;
  out.closed_form = closed;
  std::vector<double> diffs(grid.size());
  std::vector<double> errors(grid.size(), 0.0);
  if (closed) {
    for (std::size_t r = 0; r < grid.size(); ++r) {
      diffs[r] = std::abs(closed_form_risk(mu_prime, grid[r], l) -
                          closed_form_risk(mu, grid[r], l));
    }
  } else {
    for (std::size_t r = 0; r < grid.size(); ++r) {
      const auto a = population_risk_mc(mu, grid[r], l, budget.n_eval, budget.m_eval,
                                        budget.stream, budget.threads);
      const auto b = population_risk_mc(mu_prime, grid[r], l, budget.n_eval, budget.m_eval,
                                        budget.stream, budget.threads);
      diffs[r] = std::abs(b.value - a.value);
      errors[r] = std::hypot(a.std_error, b.std_error);
    }
  }
  out.argmax = static_cast<std::size_t>(
      std::max_element(diffs.begin(), diffs.end()) - diffs.begin());
  out.value = diffs[out.argmax];
  out.std_error = errors[out.argmax];
  return out;
}

const char* to_string(BoundVariant v) noexcept {
  return v == BoundVariant::main_text ? "main-text" : "appendix";
}

BoundVariant parse_bound_variant(const std::string& text) {
  if (text == "main-text") return BoundVariant::main_text;
  if (text == "appendix") return BoundVariant::appendix;
  fail(ErrorKind::config, "unknown bound variant '" + text + "'");
}

double confidence_term_samples(double delta, std::size_t n, std::size_t m) {
  return 3.0 * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(m) *
                                                  static_cast<double>(n)));
}

double confidence_term_domains(double delta, std::size_t n, BoundVariant variant) {
  const double denom = variant == BoundVariant::main_text ? static_cast<double>(n)
                                                          : 2.0 * static_cast<double>(n);
  return 3.0 * std::sqrt(std::log(2.0 / delta) / denom);
}

BoundReport theorem1_bound(const BoundInputs& in) {
  require(in.delta > 0.0 && in.delta < 0.5, ErrorKind::validation,
          "bound: delta must lie in (0, 0.5)");
  require(in.n >= 1 && in.m >= 1, ErrorKind::validation, "bound: n and m must be >= 1");
  require(std::isfinite(in.empirical_risk) && std::isfinite(in.r_mn.value) &&
              std::isfinite(in.r_n.value) && std::isfinite(in.epsilon_true) &&
              (!in.epsilon_assumed || std::isfinite(*in.epsilon_assumed)),
          ErrorKind::validation, "bound: inputs must be finite");
  BoundReport r;
  r.empirical_proxy_risk = in.empirical_risk;
  r.r_mn = in.r_mn;
  r.r_n = in.r_n;
  r.delta = in.delta;
  r.epsilon_true = in.epsilon_true;
  r.epsilon_assumed = in.epsilon_assumed;
  r.variant = in.variant;
  r.n = in.n;
  r.m = in.m;
  r.confidence_mn = confidence_term_samples(in.delta, in.n, in.m);
  r.confidence_n = confidence_term_domains(in.delta, in.n, in.variant);
  r.bound_value = recompute_bound(r);
  return r;
}

double recompute_bound(const BoundReport& r) {
  return r.empirical_proxy_risk + 2.0 * r.r_mn.value + 2.0 * r.r_n.value +
         confidence_term_samples(r.delta, r.n, r.m) +
         confidence_term_domains(r.delta, r.n, r.variant) + r.epsilon_used();
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorKind::validation, "median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

BoundExperimentResult bound_experiment(const BoundExperimentConfig& config,
                                       const HypothesisGrid& grid) {
  require(config.trials >= 1, ErrorKind::validation, "bound experiment: trials must be >= 1");
  require(config.n >= 1 && config.m >= 1, ErrorKind::validation,
          "bound experiment: n and m must be >= 1");
  const MetaDistributionSpec mu_prime = perturb_meta(config.mu, config.perturbation);
  const std::size_t m_eval = config.m_eval ? config.m_eval : config.m;
  const Stream root(config.stream);

  BoundExperimentResult result;
  result.epsilon = estimate_meta_distance(config.mu, mu_prime, grid, config.loss,
                                          {.stream = root.child("distance").key()});
  result.trials.resize(config.trials);

  parallel_for(config.trials, config.threads, [&](std::size_t t) {
    const Stream trial = root.child(t);
    const std::uint64_t data_stream = trial.child("data").key();
    const auto domains = sample_domains(mu_prime, config.n, data_stream);
    GroupedDataset data;
    data.reserve(domains.size());
    for (const auto& d : domains) {
      data.push_back({"domain-" + std::to_string(d.domain_id),
                      sample_dataset(mu_prime, d, config.m, data_stream)});
    }
    const ErmResult erm = erm_grid(grid, data, config.loss);

    BoundInputs in;
    in.empirical_risk = erm.risk.value;
    in.r_mn = estimate_rademacher_samples(
        grid, data, config.loss,
        {.sigma_draws = config.sigma_draws, .stream = trial.child("sigma-mn").key()});
    in.r_n = estimate_rademacher_domains(
        grid, mu_prime, domains, m_eval, trial.child("held-out").key(), config.loss,
        {.sigma_draws = config.sigma_draws, .stream = trial.child("sigma-n").key()});
    in.delta = config.delta;
    in.epsilon_true = result.epsilon.value;
    in.epsilon_assumed = config.epsilon_assumed;
    in.n = config.n;
    in.m = config.m;
    in.variant = config.variant;

    BoundTrial& row = result.trials[t];
    row.trial = t;
    row.erm_index = erm.index;
    row.report = theorem1_bound(in);
    if (config.mu.class_count == 2 && config.loss.kind != LossKind::logistic) {
      row.report.true_risk = closed_form_risk(config.mu, erm.hypothesis, config.loss);
    } else {
      row.report.true_risk = population_risk_mc(config.mu, erm.hypothesis, config.loss, 200,
                                                200, trial.child("true-risk").key())
                                 .value;
    }
    row.violated = row.report.true_risk > row.report.bound_value;
  });

  std::vector<double> bounds, truths, empiricals;
  std::size_t violations = 0;
  for (const auto& row : result.trials) {
    bounds.push_back(row.report.bound_value);
    truths.push_back(row.report.true_risk);
    empiricals.push_back(row.report.empirical_proxy_risk);
    violations += row.violated ? 1 : 0;
  }
  result.violation_rate = static_cast<double>(violations) / static_cast<double>(config.trials);
  result.median_bound = median(bounds);
  result.median_true_risk = median(truths);
  result.median_empirical_risk = median(empiricals);
  return result;
}

std::string bound_trials_csv(const BoundExperimentResult& result) {
  CsvTable table({"trial", "n", "m", "erm_index", "empirical_risk", "r_mn", "r_mn_std_error",
                  "r_n", "r_n_std_error", "confidence_mn", "confidence_n", "epsilon",
                  "bound_value", "true_risk", "violated"});
  for (const auto& row : result.trials) {
    const BoundReport& r = row.report;
    table.add_row({std::to_string(row.trial), std::to_string(r.n), std::to_string(r.m),
                   std::to_string(row.erm_index), format_double(r.empirical_proxy_risk),
                   format_double(r.r_mn.value), format_double(r.r_mn.std_error),
                   format_double(r.r_n.value), format_double(r.r_n.std_error),
                   format_double(r.confidence_mn), format_double(r.confidence_n),
                   format_double(r.epsilon_used()), format_double(r.bound_value),
                   format_double(r.true_risk), row.violated ? "1" : "0"});
  }
  return table.str();
}

nlohmann::json bound_summary_json(const BoundExperimentResult& result,
                                  const BoundExperimentConfig& config,
                                  std::size_t grid_size) {
  return nlohmann::json{
      {"violation_rate", result.violation_rate},
      {"median_bound", result.median_bound},
      {"median_true_risk", result.median_true_risk},
      {"median_empirical_risk", result.median_empirical_risk},
      {"epsilon_true", result.epsilon.value},
      {"epsilon_closed_form", result.epsilon.closed_form},
      {"settings",
       {{"n", config.n},
        {"m", config.m},
        {"m_eval", config.m_eval ? config.m_eval : config.m},
        {"delta", config.delta},
        {"trials", config.trials},
        {"variant", to_string(config.variant)},
        {"sigma_draws", config.sigma_draws},
        {"grid_size", grid_size},
        {"loss", to_string(config.loss.kind)},
        {"epsilon_assumed", config.epsilon_assumed ? nlohmann::json(*config.epsilon_assumed)
                                                   : nlohmann::json(nullptr)},
        {"mu", config.mu},
        {"mu_prime", perturb_meta(config.mu, config.perturbation)}}}};
}

}  // namespace domex
