#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace domex {

/// Linear decision function x -> w.x + b.
struct Hypothesis {
  std::vector<double> weights;
  double bias = 0.0;

  std::size_t dim() const noexcept { return weights.size(); }

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

enum class LossKind { ramp, zero_one, logistic };

/// Margin-based loss. `ramp` and `zero_one` take values in [0, 1]; ramp is
/// 1/2-Lipschitz in the margin. `logistic` is the unbounded smooth surrogate
/// used only for gradient training.
struct LossFunction {
  LossKind kind = LossKind::ramp;
};

enum class GridConstruction { sphere_grid, seeded_random };

struct GridOptions {
  std::size_t dim = 2;
  std::size_t size = 64;
  GridConstruction construction = GridConstruction::sphere_grid;
  std::uint64_t seed = 0;
  double weight_cap = 1.0;
  // Sphere grids are directions x bias levels; size must be divisible by
  // bias_levels. Biases are evenly spaced in [-bias_range, bias_range]
  // (a single level sits at 0). Seeded-random grids draw biases uniformly
  // from the same interval.
  std::size_t bias_levels = 1;
  double bias_range = 1.0;
};

/// Finite hypothesis class. Members are immutable and ordered.
class HypothesisGrid {
 public:
  HypothesisGrid(std::vector<Hypothesis> members, GridOptions options);

  const std::vector<Hypothesis>& members() const noexcept { return members_; }
  const GridOptions& options() const noexcept { return options_; }
  std::size_t size() const noexcept { return members_.size(); }
  const Hypothesis& operator[](std::size_t i) const { return members_[i]; }

 private:
  std::vector<Hypothesis> members_;
  GridOptions options_;
};

double dot(std::span<const double> a, std::span<const double> b);

double predict_margin(const Hypothesis& h, std::span<const double> x);

// Sign convention for binary labels: class 0 -> +1, class 1 -> -1.
constexpr int label_sign(std::size_t label) noexcept { return label == 0 ? 1 : -1; }

// +1 -> class 0, otherwise class 1. A zero margin predicts class 1.
std::size_t predict_binary(const Hypothesis& h, std::span<const double> x);

// One hypothesis per class, argmax of margins; ties go to the lowest index.
std::size_t predict_multiclass(std::span<const Hypothesis> per_class,
                               std::span<const double> x);

double loss(LossFunction l, double margin, int y_sign);

HypothesisGrid build_grid(const GridOptions& options);

const char* to_string(LossKind kind) noexcept;
const char* to_string(GridConstruction construction) noexcept;
LossKind parse_loss_kind(const std::string& text);
GridConstruction parse_grid_construction(const std::string& text);

void to_json(nlohmann::json& j, const Hypothesis& h);
void from_json(const nlohmann::json& j, Hypothesis& h);
nlohmann::json grid_to_json(const HypothesisGrid& grid);
HypothesisGrid grid_from_json(const nlohmann::json& j);

}  // namespace domex
