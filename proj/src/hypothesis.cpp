#include "domex/hypothesis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <boost/math/distributions/normal.hpp>

#include "domex/error.hpp"
#include "domex/rng.hpp"

namespace domex {
namespace {

constexpr std::uint64_t kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                                     43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};

double radical_inverse(std::uint64_t index, std::uint64_t base) {
  double result = 0.0;
  double fraction = 1.0 / static_cast<double>(base);
  while (index > 0) {
    result += static_cast<double>(index % base) * fraction;
    index /= base;
    fraction /= static_cast<double>(base);
  }
  return result;
}

std::vector<std::vector<double>> sphere_directions(std::size_t dim, std::size_t count) {
  std::vector<std::vector<double>> dirs;
  dirs.reserve(count);
  if (dim == 1) {
    require(count <= 2, ErrorKind::validation,
            "build_grid: a 1-d sphere grid has at most 2 directions");
    dirs.push_back({1.0});
    if (count == 2) dirs.push_back({-1.0});
    return dirs;
  }
  if (dim == 2) {
    for (std::size_t i = 0; i < count; ++i) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) /
                           static_cast<double>(count);
      dirs.push_back({std::cos(angle), std::sin(angle)});
    }
    return dirs;
  }
  require(dim <= std::size(kPrimes), ErrorKind::validation,
          "build_grid: sphere grid supports at most 25 dimensions");
  // Halton points pushed through the normal quantile are low-discrepancy on
  // the sphere after normalization.
  const boost::math::normal_distribution<double> unit;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> v(dim);
    double norm2 = 0.0;
    for (std::size_t t = 0; t < dim; ++t) {
      v[t] = boost::math::quantile(unit, radical_inverse(i + 1, kPrimes[t]));
      norm2 += v[t] * v[t];
    }
    const double norm = std::sqrt(norm2);
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

std::vector<double> bias_ladder(std::size_t levels, double range) {
  if (levels == 1) return {0.0};
  std::vector<double> out(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    out[l] = -range + 2.0 * range * static_cast<double>(l) / static_cast<double>(levels - 1);
  }
  return out;
}

}  // namespace

HypothesisGrid::HypothesisGrid(std::vector<Hypothesis> members, GridOptions options)
    : members_(std::move(members)), options_(options) {
  require(!members_.empty(), ErrorKind::validation, "hypothesis grid must be non-empty");
  std::set<std::pair<std::vector<double>, double>> seen;
  for (const auto& h : members_) {
    require(h.dim() == members_.front().dim(), ErrorKind::validation,
            "hypothesis grid members must share a dimension");
    require(std::all_of(h.weights.begin(), h.weights.end(),
                        [](double x) { return std::isfinite(x); }) &&
                std::isfinite(h.bias),
            ErrorKind::validation, "hypothesis grid members must be finite");
    require(seen.emplace(h.weights, h.bias).second, ErrorKind::validation,
            "hypothesis grid members must be distinct");
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double predict_margin(const Hypothesis& h, std::span<const double> x) {
  require(x.size() == h.weights.size(), ErrorKind::validation,
          "predict_margin: dimension mismatch (" + std::to_string(x.size()) + " vs " +
              std::to_string(h.weights.size()) + ")");
  return dot(h.weights, x) + h.bias;
}

std::size_t predict_binary(const Hypothesis& h, std::span<const double> x) {
  return predict_margin(h, x) > 0.0 ? 0 : 1;
}

std::size_t predict_multiclass(std::span<const Hypothesis> per_class,
                               std::span<const double> x) {
  require(!per_class.empty(), ErrorKind::validation, "predict_multiclass: no hypotheses");
  std::size_t best = 0;
  double best_margin = predict_margin(per_class[0], x);
  for (std::size_t k = 1; k < per_class.size(); ++k) {
    const double m = predict_margin(per_class[k], x);
    if (m > best_margin) {
      best_margin = m;
      best = k;
    }
  }
  return best;
}

double loss(LossFunction l, double margin, int y_sign) {
  const double z = y_sign * margin;
  switch (l.kind) {
    case LossKind::ramp:
      return std::clamp((1.0 - z) / 2.0, 0.0, 1.0);
    case LossKind::zero_one:
      return z <= 0.0 ? 1.0 : 0.0;
    case LossKind::logistic:
      // log(1 + exp(-z)) without overflow.
      return z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }
  return 0.0;
}

HypothesisGrid build_grid(const GridOptions& options) {
  require(options.size >= 1, ErrorKind::validation, "build_grid: size must be >= 1");
  require(options.dim >= 1, ErrorKind::validation, "build_grid: dim must be >= 1");
  require(std::isfinite(options.weight_cap) && options.weight_cap > 0.0,
          ErrorKind::validation, "build_grid: weight_cap must be > 0");
  require(options.bias_levels >= 1, ErrorKind::validation,
          "build_grid: bias_levels must be >= 1");
  require(std::isfinite(options.bias_range) && options.bias_range >= 0.0,
          ErrorKind::validation, "build_grid: bias_range must be >= 0");

  std::vector<Hypothesis> members;
  members.reserve(options.size);
  if (options.construction == GridConstruction::sphere_grid) {
    require(options.size % options.bias_levels == 0, ErrorKind::validation,
            "build_grid: size must be a multiple of bias_levels");
    const auto dirs = sphere_directions(options.dim, options.size / options.bias_levels);
    const auto biases = bias_ladder(options.bias_levels, options.bias_range);
    for (const auto& d : dirs) {
      for (double b : biases) {
        Hypothesis h;
        h.weights = d;
        for (double& x : h.weights) x *= options.weight_cap;
        h.bias = b;
        members.push_back(std::move(h));
      }
    }
  } else {
    Generator g(Stream(options.seed).child("grid"));
    for (std::size_t i = 0; i < options.size; ++i) {
      Hypothesis h;
      h.weights.resize(options.dim);
      double norm2 = 0.0;
      do {
        for (double& x : h.weights) x = g.normal();
        norm2 = dot(h.weights, h.weights);
      } while (norm2 == 0.0);
      const double scale = options.weight_cap / std::sqrt(norm2);
      for (double& x : h.weights) x *= scale;
      h.bias = options.bias_range * (2.0 * g.uniform() - 1.0);
      members.push_back(std::move(h));
    }
  }
  return HypothesisGrid(std::move(members), options);
}

const char* to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::ramp: return "ramp";
    case LossKind::zero_one: return "zero-one";
    case LossKind::logistic: return "logistic";
  }
  return "ramp";
}

const char* to_string(GridConstruction construction) noexcept {
  return construction == GridConstruction::sphere_grid ? "sphere-grid" : "seeded-random";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "ramp") return LossKind::ramp;
  if (text == "zero-one") return LossKind::zero_one;
  if (text == "logistic") return LossKind::logistic;
  fail(ErrorKind::config, "unknown loss kind '" + text + "'");
}

GridConstruction parse_grid_construction(const std::string& text) {
  if (text == "sphere-grid") return GridConstruction::sphere_grid;
  if (text == "seeded-random") return GridConstruction::seeded_random;
  fail(ErrorKind::config, "unknown grid construction '" + text + "'");
}

void to_json(nlohmann::json& j, const Hypothesis& h) {
  j = nlohmann::json{{"w", h.weights}, {"b", h.bias}};
}

void from_json(const nlohmann::json& j, Hypothesis& h) {
  j.at("w").get_to(h.weights);
  j.at("b").get_to(h.bias);
}

nlohmann::json grid_to_json(const HypothesisGrid& grid) {
  const GridOptions& o = grid.options();
  return nlohmann::json{{"construction", to_string(o.construction)},
                        {"dim", o.dim},
                        {"seed", o.seed},
                        {"weight_cap", o.weight_cap},
                        {"bias_levels", o.bias_levels},
                        {"bias_range", o.bias_range},
                        {"members", grid.members()}};
}

HypothesisGrid grid_from_json(const nlohmann::json& j) {
  GridOptions o;
  o.construction = parse_grid_construction(j.at("construction").get<std::string>());
  o.dim = j.at("dim").get<std::size_t>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.weight_cap = j.at("weight_cap").get<double>();
  o.bias_levels = j.at("bias_levels").get<std::size_t>();
  o.bias_range = j.at("bias_range").get<double>();
  auto members = j.at("members").get<std::vector<Hypothesis>>();
  o.size = members.size();
  return HypothesisGrid(std::move(members), o);
}

}  // namespace domex
