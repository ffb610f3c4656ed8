#include "domex/meta_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "domex/error.hpp"

namespace domex {
namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

void normalize(std::vector<double>& v) {
  const double norm = std::sqrt(dot(v, v));
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
}

std::vector<std::vector<double>> simplex_prototypes(std::size_t k) {
  // Centered basis vectors of R^k span a (k-1)-dim subspace. Gram-Schmidt on
  // the first k-1 of them gives an orthonormal basis; coordinates in that basis
  // are the vertices of a regular simplex in R^(k-1).
  std::vector<std::vector<double>> centered(k, std::vector<double>(k, -1.0 / k));
  for (std::size_t i = 0; i < k; ++i) centered[i][i] += 1.0;

  std::vector<std::vector<double>> basis;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    std::vector<double> v = centered[i];
    for (const auto& q : basis) {
      const double proj = dot(v, q);
      for (std::size_t t = 0; t < k; ++t) v[t] -= proj * q[t];
    }
    normalize(v);
    basis.push_back(std::move(v));
  }

  std::vector<std::vector<double>> out;
  out.reserve(k);
  for (const auto& c : centered) {
    std::vector<double> coords;
    coords.reserve(basis.size());
    for (const auto& q : basis) coords.push_back(dot(c, q));
    normalize(coords);
    out.push_back(std::move(coords));
  }
  return out;
}

std::vector<std::vector<double>> repulsion_prototypes(std::size_t k, std::size_t dim,
                                                      std::uint64_t seed) {
  Generator g(Stream(seed).child("prototypes"));
  std::vector<std::vector<double>> points(k, std::vector<double>(dim));
  for (auto& p : points) {
    for (double& x : p) x = g.normal();
    normalize(p);
  }
  if (dim == 1) return points;

  constexpr int kIterations = 400;
  const double step = 0.1 / static_cast<double>(k);
  std::vector<std::vector<double>> force(k, std::vector<double>(dim));
  for (int iter = 0; iter < kIterations; ++iter) {
    for (std::size_t i = 0; i < k; ++i) {
      std::fill(force[i].begin(), force[i].end(), 0.0);
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        double dist2 = 0.0;
        for (std::size_t t = 0; t < dim; ++t) {
          const double d = points[i][t] - points[j][t];
          dist2 += d * d;
        }
        const double inv = 1.0 / std::pow(std::max(dist2, 1e-12), 1.5);
        for (std::size_t t = 0; t < dim; ++t) {
          force[i][t] += (points[i][t] - points[j][t]) * inv;
        }
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t t = 0; t < dim; ++t) points[i][t] += step * force[i][t];
      normalize(points[i]);
    }
  }
  return points;
}

Stream domain_root(const MetaDistributionSpec& spec, std::uint64_t stream) {
  return Stream(spec.seed).child("domains").child(stream);
}

}  // namespace

void MetaDistributionSpec::validate() const {
  require(dim >= 1, ErrorKind::validation, "meta spec: dim must be >= 1");
  require(class_count >= 2, ErrorKind::validation, "meta spec: class_count must be >= 2");
  require(std::isfinite(prototype_scale) && prototype_scale > 0.0, ErrorKind::validation,
          "meta spec: prototype_scale must be finite and > 0");
  require(std::isfinite(domain_shift_scale) && domain_shift_scale >= 0.0,
          ErrorKind::validation, "meta spec: domain_shift_scale must be finite and >= 0");
  require(std::isfinite(noise_scale) && noise_scale >= 0.0, ErrorKind::validation,
          "meta spec: noise_scale must be finite and >= 0");
  if (!label_prior.empty()) {
    require(label_prior.size() == class_count, ErrorKind::validation,
            "meta spec: label_prior length must equal class_count");
    double sum = 0.0;
    for (double p : label_prior) {
      require(std::isfinite(p) && p >= 0.0, ErrorKind::validation,
              "meta spec: label_prior entries must be finite and >= 0");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-12, ErrorKind::validation,
            "meta spec: label_prior must sum to 1");
  }
  if (!prototype_offset.empty()) {
    require(prototype_offset.size() == dim, ErrorKind::validation,
            "meta spec: prototype_offset length must equal dim");
    require(all_finite(prototype_offset), ErrorKind::validation,
            "meta spec: prototype_offset must be finite");
  }
}

void PerturbationSpec::validate(std::size_t dim) const {
  require(std::isfinite(shift_scale_factor) && shift_scale_factor > 0.0,
          ErrorKind::validation, "perturbation: shift_scale_factor must be > 0");
  require(std::isfinite(noise_scale_factor) && noise_scale_factor > 0.0,
          ErrorKind::validation, "perturbation: noise_scale_factor must be > 0");
  if (!prototype_offset.empty()) {
    require(prototype_offset.size() == dim, ErrorKind::validation,
            "perturbation: prototype_offset length must equal dim");
    require(all_finite(prototype_offset), ErrorKind::validation,
            "perturbation: prototype_offset must be finite");
  }
}

PerturbationSpec PerturbationSpec::inverse() const {
  PerturbationSpec inv;
  inv.prototype_offset = prototype_offset;
  for (double& x : inv.prototype_offset) x = -x;
  inv.shift_scale_factor = 1.0 / shift_scale_factor;
  inv.noise_scale_factor = 1.0 / noise_scale_factor;
  return inv;
}

std::vector<double> label_prior_of(const MetaDistributionSpec& spec) {
  if (!spec.label_prior.empty()) return spec.label_prior;
  return std::vector<double>(spec.class_count, 1.0 / static_cast<double>(spec.class_count));
}

std::vector<double> prototype_offset_of(const MetaDistributionSpec& spec) {
  if (!spec.prototype_offset.empty()) return spec.prototype_offset;
  return std::vector<double>(spec.dim, 0.0);
}

std::vector<std::vector<double>> class_prototypes(const MetaDistributionSpec& spec) {
  const std::size_t k = spec.class_count;
  const std::size_t dim = spec.dim;
  if (k <= dim) {
    std::vector<std::vector<double>> out(k, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < k; ++i) out[i][i] = 1.0;
    return out;
  }
  if (k == dim + 1) return simplex_prototypes(k);
  return repulsion_prototypes(k, dim, spec.seed);
}

std::vector<double> class_mean(const MetaDistributionSpec& spec, std::size_t label) {
  require(label < spec.class_count, ErrorKind::validation, "label out of range");
  std::vector<double> mean = class_prototypes(spec)[label];
  const std::vector<double> offset = prototype_offset_of(spec);
  for (std::size_t t = 0; t < mean.size(); ++t) {
    mean[t] = spec.prototype_scale * mean[t] + offset[t];
  }
  return mean;
}

std::vector<DomainSpec> sample_domains(const MetaDistributionSpec& spec, std::size_t n,
                                       std::uint64_t stream) {
  require(n >= 1, ErrorKind::empty_request, "sample_domains: n must be >= 1");
  spec.validate();
  const Stream root = domain_root(spec, stream);
  std::vector<DomainSpec> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Stream domain_stream = root.child(j);
    Generator g(domain_stream);
    DomainSpec d;
    d.domain_id = static_cast<std::int64_t>(j);
    d.parent_seed = domain_stream.key();
    d.shift.resize(spec.dim);
    for (double& x : d.shift) x = spec.domain_shift_scale * g.normal();
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<LabeledSample> sample_dataset(const MetaDistributionSpec& spec,
                                          const DomainSpec& domain, std::size_t m,
                                          std::uint64_t stream) {
  require(m >= 1, ErrorKind::empty_request, "sample_dataset: m must be >= 1");
  spec.validate();
  require(domain.shift.size() == spec.dim, ErrorKind::validation,
          "sample_dataset: domain shift length must equal dim");

  const std::vector<double> prior = label_prior_of(spec);
  std::vector<std::vector<double>> means;
  means.reserve(spec.class_count);
  for (std::size_t y = 0; y < spec.class_count; ++y) means.push_back(class_mean(spec, y));

  const Stream root = Stream(domain.parent_seed).child("samples").child(stream);
  std::vector<LabeledSample> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    Generator g(root.child(i));
    LabeledSample s;
    s.label = g.categorical(prior);
    s.domain_id = domain.domain_id;
    s.features.resize(spec.dim);
    for (std::size_t t = 0; t < spec.dim; ++t) {
      s.features[t] = means[s.label][t] + domain.shift[t] + spec.noise_scale * g.normal();
    }
    out.push_back(std::move(s));
  }
  return out;
}

MetaDistributionSpec perturb_meta(const MetaDistributionSpec& spec,
                                  const PerturbationSpec& p) {
  spec.validate();
  p.validate(spec.dim);
  MetaDistributionSpec out = spec;
  if (!p.prototype_offset.empty()) {
    std::vector<double> offset = prototype_offset_of(spec);
    for (std::size_t t = 0; t < offset.size(); ++t) offset[t] += p.prototype_offset[t];
    const bool zero = std::all_of(offset.begin(), offset.end(),
                                  [](double x) { return x == 0.0; });
    out.prototype_offset = zero ? std::vector<double>{} : std::move(offset);
  }
  out.domain_shift_scale = spec.domain_shift_scale * p.shift_scale_factor;
  out.noise_scale = spec.noise_scale * p.noise_scale_factor;
  return out;
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double closed_form_risk(const MetaDistributionSpec& spec, const Hypothesis& h,
                        LossFunction loss_fn) {
  spec.validate();
  require(spec.class_count == 2, ErrorKind::unsupported,
          "closed_form_risk: only binary tasks have a closed form");
  require(h.dim() == spec.dim, ErrorKind::validation,
          "closed_form_risk: hypothesis dimension mismatch");
  require(loss_fn.kind != LossKind::logistic, ErrorKind::unsupported,
          "closed_form_risk: logistic loss has no closed form here");

  const double total_sd = std::sqrt(spec.noise_scale * spec.noise_scale +
                                    spec.domain_shift_scale * spec.domain_shift_scale);
  const double margin_sd = total_sd * std::sqrt(dot(h.weights, h.weights));
  const std::vector<double> prior = label_prior_of(spec);

  double risk = 0.0;
  for (std::size_t y = 0; y < 2; ++y) {
    const std::vector<double> mean = class_mean(spec, y);
    // Signed margin y * f(x) is N(a, v^2).
    const double a = label_sign(y) * (dot(h.weights, mean) + h.bias);
    const double v = margin_sd;
    double class_risk = 0.0;
    if (v == 0.0) {
      class_risk = loss(loss_fn, a, 1);
    } else if (loss_fn.kind == LossKind::zero_one) {
      class_risk = standard_normal_cdf(-a / v);
    } else {
      // ramp(z) = 1 for z <= -1, (1 - z) / 2 on (-1, 1), 0 for z >= 1.
      const double lo = (-1.0 - a) / v;
      const double hi = (1.0 - a) / v;
      const double mass = standard_normal_cdf(hi) - standard_normal_cdf(lo);
      const double partial_mean = a * mass + v * (normal_pdf(lo) - normal_pdf(hi));
      class_risk = standard_normal_cdf(lo) + 0.5 * (mass - partial_mean);
    }
    risk += prior[y] * class_risk;
  }
  return std::clamp(risk, 0.0, 1.0);
}

void to_json(nlohmann::json& j, const MetaDistributionSpec& spec) {
  j = nlohmann::json{{"dim", spec.dim},
                     {"class_count", spec.class_count},
                     {"prototype_scale", spec.prototype_scale},
                     {"domain_shift_scale", spec.domain_shift_scale},
                     {"noise_scale", spec.noise_scale},
                     {"label_prior", label_prior_of(spec)},
                     {"prototype_offset", prototype_offset_of(spec)},
                     {"seed", spec.seed}};
}

void to_json(nlohmann::json& j, const LabeledSample& s) {
  j = nlohmann::json{{"domain_id", s.domain_id}, {"y", s.label}, {"x", s.features}};
}

std::string to_jsonl(std::span<const LabeledSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    out += nlohmann::json(s).dump();
    out += '\n';
  }
  return out;
}

}  // namespace domex
