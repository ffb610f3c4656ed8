#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "domex/hypothesis.hpp"
#include "domex/rng.hpp"

namespace domex {

/// Gaussian meta-distribution over domains.
///
/// A domain is a shift vector delta ~ N(0, tau^2 I). Within a domain, a labeled
/// sample draws y from `label_prior` and x = c * prototype(y) + offset + delta
/// + N(0, sigma^2 I). `prototype_offset` is zero for the reference
/// distribution and is set by perturb_meta to build a proxy.
struct MetaDistributionSpec {
  std::size_t dim = 2;
  std::size_t class_count = 2;
  double prototype_scale = 2.0;
  double domain_shift_scale = 0.5;
  double noise_scale = 0.5;
  std::vector<double> label_prior;       // empty means uniform
  std::vector<double> prototype_offset;  // empty means zero
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const MetaDistributionSpec&,
                         const MetaDistributionSpec&) = default;
};

struct DomainSpec {
  std::int64_t domain_id = 0;
  std::vector<double> shift;
  std::uint64_t parent_seed = 0;

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

struct LabeledSample {
  std::vector<double> features;
  std::size_t label = 0;
  std::int64_t domain_id = 0;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct PerturbationSpec {
  std::vector<double> prototype_offset;  // empty means zero
  double shift_scale_factor = 1.0;
  double noise_scale_factor = 1.0;

  void validate(std::size_t dim) const;
  // Undoes this perturbation when applied after it.
  PerturbationSpec inverse() const;
};

// Effective label prior (uniform when the spec leaves it empty).
std::vector<double> label_prior_of(const MetaDistributionSpec& spec);
// Effective offset (zeros when the spec leaves it empty).
std::vector<double> prototype_offset_of(const MetaDistributionSpec& spec);

/// Unit-norm class prototypes. Standard basis when class_count <= dim, a
/// regular simplex (Gram-Schmidt on centered basis vectors) when
/// class_count == dim + 1, and seeded repulsion on the sphere otherwise.
std::vector<std::vector<double>> class_prototypes(const MetaDistributionSpec& spec);

// Mean feature vector of class `label`: c * prototype + offset.
std::vector<double> class_mean(const MetaDistributionSpec& spec, std::size_t label);

std::vector<DomainSpec> sample_domains(const MetaDistributionSpec& spec,
                                       std::size_t n, std::uint64_t stream);

std::vector<LabeledSample> sample_dataset(const MetaDistributionSpec& spec,
                                          const DomainSpec& domain,
                                          std::size_t m, std::uint64_t stream);

MetaDistributionSpec perturb_meta(const MetaDistributionSpec& spec,
                                  const PerturbationSpec& p);

/// Exact population risk of a linear hypothesis for a binary task. The domain
/// shift is marginalized into total variance sigma^2 + tau^2 per coordinate,
/// so each class margin is Gaussian. Supports zero-one and ramp loss.
double closed_form_risk(const MetaDistributionSpec& spec, const Hypothesis& h,
                        LossFunction loss);

double standard_normal_cdf(double x);

std::string to_jsonl(std::span<const LabeledSample> samples);

void to_json(nlohmann::json& j, const MetaDistributionSpec& spec);
void to_json(nlohmann::json& j, const LabeledSample& s);

}  // namespace domex
