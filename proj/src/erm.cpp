#include "domex/erm.hpp"

#include <cmath>
#include <map>

#include "domex/error.hpp"
#include "domex/parallel.hpp"
#include "domex/rng.hpp"

namespace domex {
namespace {

void validate_dataset(const GroupedDataset& data) {
  require(!data.empty(), ErrorKind::validation, "dataset has no domain groups");
  for (const auto& g : data) {
    require(!g.samples.empty(), ErrorKind::validation,
            "domain group '" + g.name + "' is empty");
    for (const auto& s : g.samples) {
      require(s.label < 2, ErrorKind::validation, "binary risk requires labels in {0, 1}");
    }
  }
}

std::size_t mean_group_size(const GroupedDataset& data) {
  std::size_t total = 0;
  for (const auto& g : data) total += g.samples.size();
  return total / data.size();
}

}  // namespace

GroupedDataset group_by_domain(std::span<const LabeledSample> samples) {
  GroupedDataset out;
  std::map<std::int64_t, std::size_t> index;
  for (const auto& s : samples) {
    auto [it, inserted] = index.emplace(s.domain_id, out.size());
    if (inserted) out.push_back({"domain-" + std::to_string(s.domain_id), {}});
    out[it->second].samples.push_back(s);
  }
  return out;
}

const char* to_string(RiskKind kind) noexcept {
  switch (kind) {
    case RiskKind::empirical: return "empirical";
    case RiskKind::population_mc: return "population-mc";
    case RiskKind::population_closed_form: return "population-closed-form";
  }
  return "empirical";
}

RiskEstimate empirical_risk(const Hypothesis& h, const GroupedDataset& data, LossFunction l) {
  validate_dataset(data);
  double total = 0.0;
  for (const auto& g : data) {
    double sum = 0.0;
    for (const auto& s : g.samples) {
      sum += loss(l, predict_margin(h, s.features), label_sign(s.label));
    }
    total += sum / static_cast<double>(g.samples.size());
  }
  RiskEstimate r;
  r.value = total / static_cast<double>(data.size());
  r.kind = RiskKind::empirical;
  r.n_domains = data.size();
  r.m_per_domain = mean_group_size(data);
  return r;
}

LossMatrix::LossMatrix(const HypothesisGrid& grid, const GroupedDataset& data,
                       LossFunction l)
    : members_(grid.size()) {
  validate_dataset(data);
  offsets_.push_back(0);
  for (const auto& g : data) offsets_.push_back(offsets_.back() + g.samples.size());
  columns_ = offsets_.back();
  values_.resize(members_ * columns_);
  for (std::size_t r = 0; r < members_; ++r) {
    const Hypothesis& h = grid[r];
    double* out = values_.data() + r * columns_;
    for (const auto& g : data) {
      for (const auto& s : g.samples) {
        *out++ = loss(l, predict_margin(h, s.features), label_sign(s.label));
      }
    }
  }
}

double LossMatrix::balanced_mean(std::size_t r) const {
  const auto values = row(r);
  double total = 0.0;
  const std::size_t groups = offsets_.size() - 1;
  for (std::size_t g = 0; g < groups; ++g) {
    double sum = 0.0;
    for (std::size_t c = offsets_[g]; c < offsets_[g + 1]; ++c) sum += values[c];
    total += sum / static_cast<double>(offsets_[g + 1] - offsets_[g]);
  }
  return total / static_cast<double>(groups);
}

std::vector<double> LossMatrix::group_means() const {
  const std::size_t groups = offsets_.size() - 1;
  std::vector<double> out(members_ * groups);
  for (std::size_t r = 0; r < members_; ++r) {
    const auto values = row(r);
    for (std::size_t g = 0; g < groups; ++g) {
      double sum = 0.0;
      for (std::size_t c = offsets_[g]; c < offsets_[g + 1]; ++c) sum += values[c];
      out[r * groups + g] = sum / static_cast<double>(offsets_[g + 1] - offsets_[g]);
    }
  }
  return out;
}

ErmResult erm_grid(const HypothesisGrid& grid, const GroupedDataset& data, LossFunction l) {
  const LossMatrix matrix(grid, data, l);
  std::size_t best = 0;
  double best_risk = matrix.balanced_mean(0);
  for (std::size_t r = 1; r < matrix.members(); ++r) {
    const double risk = matrix.balanced_mean(r);
    if (risk < best_risk) {
      best_risk = risk;
      best = r;
    }
  }
  ErmResult out;
  out.index = best;
  out.hypothesis = grid[best];
  out.risk.value = best_risk;
  out.risk.kind = RiskKind::empirical;
  out.risk.n_domains = data.size();
  out.risk.m_per_domain = mean_group_size(data);
  return out;
}

const char* to_string(TrainMode mode) noexcept {
  switch (mode) {
    case TrainMode::grid_erm: return "grid-erm";
    case TrainMode::gd: return "gd";
    case TrainMode::gd_ema: return "gd-ema";
  }
  return "grid-erm";
}

TrainMode parse_train_mode(const std::string& text) {
  if (text == "grid-erm") return TrainMode::grid_erm;
  if (text == "gd") return TrainMode::gd;
  if (text == "gd-ema") return TrainMode::gd_ema;
  fail(ErrorKind::config, "unknown train mode '" + text + "'");
}

void TrainConfig::validate() const {
  require(ema_decay >= 0.0 && ema_decay < 1.0, ErrorKind::validation,
          "train: ema_decay must be in [0, 1)");
  require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorKind::validation,
          "train: learning_rate must be > 0");
  if (mode != TrainMode::grid_erm) {
    require(steps >= 1, ErrorKind::validation, "train: steps must be >= 1");
    require(batch_size >= 1, ErrorKind::validation, "train: batch_size must be >= 1");
  }
}

std::vector<double> flatten(const Hypothesis& h) {
  std::vector<double> theta = h.weights;
  theta.push_back(h.bias);
  return theta;
}

Hypothesis unflatten(std::span<const double> theta) {
  Hypothesis h;
  h.weights.assign(theta.begin(), theta.end() - 1);
  h.bias = theta.back();
  return h;
}

std::vector<std::vector<double>> ema_recursive(std::span<const std::vector<double>> trajectory,
                                               double decay) {
  std::vector<std::vector<double>> out;
  if (trajectory.empty()) return out;
  out.reserve(trajectory.size());
  out.push_back(trajectory.front());
  for (std::size_t t = 1; t < trajectory.size(); ++t) {
    std::vector<double> next(trajectory[t].size());
    for (std::size_t k = 0; k < next.size(); ++k) {
      next[k] = decay * out.back()[k] + (1.0 - decay) * trajectory[t][k];
    }
    out.push_back(std::move(next));
  }
  return out;
}

std::vector<double> ema_unrolled(std::span<const std::vector<double>> trajectory,
                                 double decay) {
  require(!trajectory.empty(), ErrorKind::validation, "ema_unrolled: empty trajectory");
  const std::size_t steps = trajectory.size() - 1;
  std::vector<double> out(trajectory.front().size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = std::pow(decay, static_cast<double>(steps)) * trajectory.front()[k];
  }
  for (std::size_t t = 1; t <= steps; ++t) {
    const double weight = (1.0 - decay) * std::pow(decay, static_cast<double>(steps - t));
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weight * trajectory[t][k];
  }
  return out;
}

GdResult train_gd_ema(const TrainConfig& config, const GroupedDataset& data,
                      LossFunction curve_loss) {
  config.validate();
  require(config.mode != TrainMode::grid_erm, ErrorKind::validation,
          "train_gd_ema requires a gradient mode");
  validate_dataset(data);

  const std::size_t dim = data.front().samples.front().features.size();
  std::vector<double> theta(dim + 1, 0.0);
  std::vector<double> ema = theta;
  std::vector<double> grad(dim + 1);
  const double decay = config.ema_decay;
  const std::size_t curve_every =
      config.curve_every > 0 ? config.curve_every : std::max<std::size_t>(1, config.steps / 50);

  GdResult result;
  auto record_curve = [&](std::size_t step) {
    result.curve.push_back({step, empirical_risk(unflatten(theta), data, curve_loss).value,
                            empirical_risk(unflatten(ema), data, curve_loss).value});
  };
  if (config.record_trajectory) {
    result.trajectory.push_back(unflatten(theta));
    result.ema_trajectory.push_back(unflatten(ema));
  }
  record_curve(0);

  Generator g(Stream(config.seed).child("batches"));
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto& group = data[g.below(data.size())];
      const auto& s = group.samples[g.below(group.samples.size())];
      const int y = label_sign(s.label);
      double margin = theta[dim];
      for (std::size_t k = 0; k < dim; ++k) margin += theta[k] * s.features[k];
      // d/dm log(1 + exp(-y m)) = -y / (1 + exp(y m))
      const double coef = -y / (1.0 + std::exp(y * margin));
      for (std::size_t k = 0; k < dim; ++k) grad[k] += coef * s.features[k] * inv_batch;
      grad[dim] += coef * inv_batch;
    }
    for (std::size_t k = 0; k <= dim; ++k) {
      if (!std::isfinite(grad[k])) {
        fail(ErrorKind::divergence,
             "train: non-finite gradient at step " + std::to_string(step));
      }
      theta[k] -= config.learning_rate * grad[k];
      if (!std::isfinite(theta[k])) {
        fail(ErrorKind::divergence,
             "train: parameters overflowed at step " + std::to_string(step));
      }
      ema[k] = decay * ema[k] + (1.0 - decay) * theta[k];
    }
    if (config.record_trajectory) {
      result.trajectory.push_back(unflatten(theta));
      result.ema_trajectory.push_back(unflatten(ema));
    }
    if (step % curve_every == 0 || step == config.steps) record_curve(step);
  }
  result.raw = unflatten(theta);
  result.ema = unflatten(ema);
  return result;
}

RiskEstimate population_risk_mc(const MetaDistributionSpec& spec, const Hypothesis& h,
                                LossFunction l, std::size_t n_eval, std::size_t m_eval,
                                std::uint64_t stream, unsigned threads) {
  require(n_eval >= 1 && m_eval >= 1, ErrorKind::empty_request,
          "population_risk_mc: evaluation counts must be >= 1");
  const auto domains = sample_domains(spec, n_eval, stream);
  std::vector<double> per_domain(n_eval);
  parallel_for(n_eval, threads, [&](std::size_t j) {
    const auto samples = sample_dataset(spec, domains[j], m_eval, stream);
    double sum = 0.0;
    for (const auto& s : samples) {
      sum += loss(l, predict_margin(h, s.features), label_sign(s.label));
    }
    per_domain[j] = sum / static_cast<double>(m_eval);
  });
  double mean = 0.0;
  for (double r : per_domain) mean += r;
  mean /= static_cast<double>(n_eval);
  double var = 0.0;
  for (double r : per_domain) var += (r - mean) * (r - mean);
  RiskEstimate out;
  out.value = mean;
  out.kind = RiskKind::population_mc;
  out.n_domains = n_eval;
  out.m_per_domain = m_eval;
  out.std_error =
      n_eval > 1 ? std::sqrt(var / static_cast<double>(n_eval - 1) / static_cast<double>(n_eval))
                 : 0.0;
  return out;
}

}  // namespace domex
