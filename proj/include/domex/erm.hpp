#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "domex/hypothesis.hpp"
#include "domex/meta_sim.hpp"

namespace domex {

// Labeled samples from one domain (or one synthetic pseudo-domain).
struct DomainGroup {
  std::string name;
  std::vector<LabeledSample> samples;
};

using GroupedDataset = std::vector<DomainGroup>;

// Groups samples by domain_id, in order of first appearance.
GroupedDataset group_by_domain(std::span<const LabeledSample> samples);

enum class RiskKind { empirical, population_mc, population_closed_form };

struct RiskEstimate {
  double value = 0.0;
  RiskKind kind = RiskKind::empirical;
  std::size_t n_domains = 0;
  std::size_t m_per_domain = 0;  // mean group size, rounded down
  double std_error = 0.0;        // Monte-Carlo estimates only
};

const char* to_string(RiskKind kind) noexcept;

/// Domain-balanced empirical risk: (1/n) sum_j (1/m_j) sum_i l(f(x_ij), y_ij).
/// Binary labels only.
RiskEstimate empirical_risk(const Hypothesis& h, const GroupedDataset& data,
                            LossFunction l);

/// Per-member, per-sample losses for a grid over a grouped dataset. Row r holds
/// member r's losses with samples laid out group after group.
class LossMatrix {
 public:
  LossMatrix(const HypothesisGrid& grid, const GroupedDataset& data, LossFunction l);

  std::size_t members() const noexcept { return members_; }
  std::size_t columns() const noexcept { return columns_; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * columns_, columns_};
  }
  // Column ranges [begin, end) per group.
  const std::vector<std::size_t>& group_offsets() const noexcept { return offsets_; }

  // Domain-balanced mean of row r.
  double balanced_mean(std::size_t r) const;
  // Mean of row r over each group: a members x groups matrix, row-major.
  std::vector<double> group_means() const;

 private:
  std::size_t members_ = 0;
  std::size_t columns_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<double> values_;
};

struct ErmResult {
  std::size_t index = 0;
  Hypothesis hypothesis;
  RiskEstimate risk;
};

/// Exact minimizer of the domain-balanced empirical risk over a finite grid.
/// Ties go to the lowest grid index.
ErmResult erm_grid(const HypothesisGrid& grid, const GroupedDataset& data, LossFunction l);

enum class TrainMode { grid_erm, gd, gd_ema };

const char* to_string(TrainMode mode) noexcept;
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
  TrainMode mode = TrainMode::grid_erm;
  double learning_rate = 0.1;
  std::size_t steps = 500;
  double ema_decay = 0.999;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Curve sampling period; 0 picks roughly 50 points.
  std::size_t curve_every = 0;
  bool record_trajectory = false;

  void validate() const;
};

struct CurvePoint {
  std::size_t step = 0;
  double raw_risk = 0.0;
  double ema_risk = 0.0;
};

struct GdResult {
  Hypothesis raw;
  Hypothesis ema;
  std::vector<CurvePoint> curve;
  // theta_0 .. theta_T and the matching EMA sequence, when recorded.
  std::vector<Hypothesis> trajectory;
  std::vector<Hypothesis> ema_trajectory;
};

/// Mini-batch gradient descent on the logistic surrogate with an exponential
/// moving average of the parameters: ema_t = a * ema_{t-1} + (1 - a) * theta_t,
/// ema_0 = theta_0 = 0. Batches sample a domain uniformly, then a sample within
/// it, which matches the domain-balanced objective. `curve_loss` scores the
/// curve points.
GdResult train_gd_ema(const TrainConfig& config, const GroupedDataset& data,
                      LossFunction curve_loss);

/// Recursive EMA over a parameter trajectory, returning ema_0 .. ema_T.
std::vector<std::vector<double>> ema_recursive(std::span<const std::vector<double>> trajectory,
                                               double decay);

/// Closed form of the final EMA:
/// a^T theta_0 + (1 - a) sum_{t=1..T} a^(T-t) theta_t.
std::vector<double> ema_unrolled(std::span<const std::vector<double>> trajectory, double decay);

std::vector<double> flatten(const Hypothesis& h);
Hypothesis unflatten(std::span<const double> theta);

/// Monte-Carlo population risk on freshly sampled evaluation domains. The
/// standard error is the spread of per-domain risks over sqrt(n_eval).
RiskEstimate population_risk_mc(const MetaDistributionSpec& spec, const Hypothesis& h,
                                LossFunction l, std::size_t n_eval, std::size_t m_eval,
                                std::uint64_t stream, unsigned threads = 1);

}  // namespace domex
