#ifndef OWS_SAMPLING_HPP
#define OWS_SAMPLING_HPP

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ows/model.hpp"
#include "ows/outlier.hpp"

namespace ows {

enum class SamplingMethod { kOws, kLisaUniform, kLisaD, kOwsReverse, kBi, kRm };

inline constexpr SamplingMethod kAllSamplingMethods[] = {
    SamplingMethod::kOws,        SamplingMethod::kLisaUniform, SamplingMethod::kLisaD,
    SamplingMethod::kOwsReverse, SamplingMethod::kBi,          SamplingMethod::kRm};

std::string_view method_name(SamplingMethod method);
SamplingMethod parse_method(std::string_view name);

/// Per-block activation probabilities. Embedding and head are outside the plan
/// and always trained.
struct SamplingPlan {
  SamplingMethod method = SamplingMethod::kLisaUniform;
  double gamma = 0.0;
  std::vector<double> p;

  Index n_layers() const { return static_cast<Index>(p.size()); }
  nlohmann::json to_json() const;
  static SamplingPlan from_json(const nlohmann::json& j);
};

struct ActiveSet {
  Index period = 0;
  std::vector<Index> blocks;  // ascending, 0-based

  bool contains(Index block) const;
  std::vector<bool> mask(Index n_layers) const;
};

enum class DrawMode {
  kBernoulli,    // independent coin per block
  kExactBudget,  // systematic sampling: exactly floor/ceil(gamma) blocks, same marginals
};

/// Scale non-negative weights to probabilities summing to gamma. Entries that
/// would exceed 1 are clipped to 1 and the surplus is re-spread over the rest
/// in proportion to their weights, repeated until nothing exceeds 1. If the
/// remaining weights are all zero the surplus is spread evenly over them.
/// Equal weights always produce exactly gamma / n.
std::vector<double> normalize_to_budget(std::span<const double> weights, double gamma);

SamplingPlan lisa_probabilities(Index n_layers, double gamma);
SamplingPlan lisa_d_probabilities(Index n_layers, double gamma);
/// Throws ConfigError for an all-zero profile.
SamplingPlan ows_probabilities(const OutlierProfile& profile, double gamma);
/// Weights max(D) + min(D) - D_l; a flat profile falls back to the LISA plan.
SamplingPlan reverse_ows_probabilities(const OutlierProfile& profile, double gamma);
/// Plan for an arbitrary non-negative per-block score (BI, RM).
SamplingPlan plan_from_scores(SamplingMethod method, std::span<const double> scores, double gamma);

// Block Influence: 1 - mean_rows cos(x, block(x)).
std::vector<double> bi_scores(const Model& model, std::span<const Batch> batches);
// Relative Magnitude: mean_rows ||f(x)|| / ||x + f(x)|| with f the residual branch.
std::vector<double> rm_scores(const Model& model, std::span<const Batch> batches);

/// Counter-based draw keyed by (seed, period, block); independent of call order.
ActiveSet draw_active_set(const SamplingPlan& plan, std::uint64_t seed, Index period,
                          DrawMode mode = DrawMode::kBernoulli);

}  // namespace ows

#endif  // OWS_SAMPLING_HPP
