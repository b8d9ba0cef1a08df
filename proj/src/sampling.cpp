#include "ows/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ows/error.hpp"
#include "ows/random.hpp"

namespace ows {
namespace {

constexpr std::uint64_t kSystematicTag = 0xFFFFFFFFull;

void check_gamma(Index n, double gamma) {
  if (n < 1) throw ConfigError("sampling: need at least one layer");
  if (!(gamma > 0.0) || gamma > static_cast<double>(n)) {
    throw ConfigError("sampling: gamma " + std::to_string(gamma) + " outside (0, " + std::to_string(n) + "]");
  }
}

SamplingPlan make_plan(SamplingMethod method, double gamma, std::vector<double> p) {
  SamplingPlan plan;
  plan.method = method;
  plan.gamma = gamma;
  plan.p = std::move(p);
  return plan;
}

// Mean over all rows of per-row statistic fn(x_row, y_row).
template <typename RowFn>
std::vector<double> per_block_row_mean(const Model& model, std::span<const Batch> batches, RowFn fn) {
  if (batches.empty()) throw ConfigError("block scores: at least one batch is required");
  const auto n = static_cast<size_t>(model.spec.n_layers);
  std::vector<double> sum(n, 0.0);
  Index rows = 0;
  for (const Batch& b : batches) {
    const ForwardTrace t = forward(model, b);
    for (size_t l = 0; l < n; ++l) {
      const Matrix& x = t.block_input(static_cast<Index>(l));
      const Matrix& y = t.block_output(static_cast<Index>(l));
      for (Index i = 0; i < x.rows(); ++i) sum[l] += fn(x.row(i), y.row(i));
    }
    rows += t.rows;
  }
  for (double& s : sum) s /= static_cast<double>(rows);
  return sum;
}

}  // namespace

std::string_view method_name(SamplingMethod method) {
  switch (method) {
    case SamplingMethod::kOws: return "ows";
    case SamplingMethod::kLisaUniform: return "lisa-uniform";
    case SamplingMethod::kLisaD: return "lisa-d";
    case SamplingMethod::kOwsReverse: return "ows-reverse";
    case SamplingMethod::kBi: return "bi";
    case SamplingMethod::kRm: return "rm";
  }
  return "?";
}

SamplingMethod parse_method(std::string_view name) {
  for (auto m : kAllSamplingMethods) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected ows, lisa-uniform, lisa-d, ows-reverse, bi or rm)");
}

nlohmann::json SamplingPlan::to_json() const {
  return {{"method", method_name(method)}, {"gamma", gamma}, {"p", p}};
}

SamplingPlan SamplingPlan::from_json(const nlohmann::json& j) {
  SamplingPlan plan;
  try {
    plan.method = parse_method(j.at("method").get<std::string>());
    plan.gamma = j.at("gamma").get<double>();
    plan.p = j.at("p").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("plan JSON malformed: ") + e.what());
  }
  for (double v : plan.p) {
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("plan field 'p' entries must lie in [0, 1]");
  }
  return plan;
}

bool ActiveSet::contains(Index block) const {
  return std::binary_search(blocks.begin(), blocks.end(), block);
}

std::vector<bool> ActiveSet::mask(Index n_layers) const {
  std::vector<bool> m(static_cast<size_t>(n_layers), false);
  for (Index b : blocks) m[static_cast<size_t>(b)] = true;
  return m;
}

std::vector<double> normalize_to_budget(std::span<const double> weights, double gamma) {
  const auto n = weights.size();
  check_gamma(static_cast<Index>(n), gamma);
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("sampling: weights must be finite and >= 0");
  }
  if (std::all_of(weights.begin(), weights.end(), [&](double w) { return w == weights.front(); })) {
    return std::vector<double>(n, gamma / static_cast<double>(n));
  }

  std::vector<double> p(n, 0.0);
  std::vector<bool> clipped(n, false);
  for (;;) {
    const auto n_clipped = static_cast<double>(std::count(clipped.begin(), clipped.end(), true));
    const double budget = gamma - n_clipped;
    double wsum = 0.0;
    size_t n_free = 0;
    for (size_t i = 0; i < n; ++i) {
      if (!clipped[i]) {
        wsum += weights[i];
        ++n_free;
      }
    }
    if (n_free == 0 || budget <= 0.0) {
      for (size_t i = 0; i < n; ++i) {
        if (!clipped[i]) p[i] = 0.0;
      }
      break;
    }
    if (wsum <= 0.0) {
      for (size_t i = 0; i < n; ++i) {
        if (!clipped[i]) p[i] = budget / static_cast<double>(n_free);
      }
      break;
    }
    bool newly_clipped = false;
    for (size_t i = 0; i < n; ++i) {
      if (clipped[i]) continue;
      p[i] = budget * weights[i] / wsum;
      if (p[i] > 1.0) {
        p[i] = 1.0;
        clipped[i] = true;
        newly_clipped = true;
      }
    }
    if (!newly_clipped) break;
  }
  return p;
}

SamplingPlan lisa_probabilities(Index n_layers, double gamma) {
  check_gamma(n_layers, gamma);
  return make_plan(SamplingMethod::kLisaUniform, gamma,
                   std::vector<double>(static_cast<size_t>(n_layers), gamma / static_cast<double>(n_layers)));
}

SamplingPlan lisa_d_probabilities(Index n_layers, double gamma) {
  check_gamma(n_layers, gamma);
  std::vector<double> ramp(static_cast<size_t>(n_layers));
  for (Index l = 0; l < n_layers; ++l) ramp[static_cast<size_t>(l)] = static_cast<double>(n_layers - l);
  return make_plan(SamplingMethod::kLisaD, gamma, normalize_to_budget(ramp, gamma));
}

SamplingPlan ows_probabilities(const OutlierProfile& profile, double gamma) {
  check_gamma(static_cast<Index>(profile.d.size()), gamma);
  if (std::all_of(profile.d.begin(), profile.d.end(), [](double v) { return v == 0.0; })) {
    throw ConfigError("ows_probabilities: degenerate profile (every outlier ratio is zero at tau=" +
                      std::to_string(profile.tau) + ")");
  }
  return make_plan(SamplingMethod::kOws, gamma, normalize_to_budget(profile.d, gamma));
}

SamplingPlan reverse_ows_probabilities(const OutlierProfile& profile, double gamma) {
  const Index n = static_cast<Index>(profile.d.size());
  check_gamma(n, gamma);
  const auto [lo, hi] = std::minmax_element(profile.d.begin(), profile.d.end());
  if (*hi == *lo) {
    auto plan = lisa_probabilities(n, gamma);
    plan.method = SamplingMethod::kOwsReverse;
    return plan;
  }
  std::vector<double> reflected(profile.d.size());
  for (size_t i = 0; i < reflected.size(); ++i) reflected[i] = *hi + *lo - profile.d[i];
  return make_plan(SamplingMethod::kOwsReverse, gamma, normalize_to_budget(reflected, gamma));
}

SamplingPlan plan_from_scores(SamplingMethod method, std::span<const double> scores, double gamma) {
  return make_plan(method, gamma, normalize_to_budget(scores, gamma));
}

std::vector<double> bi_scores(const Model& model, std::span<const Batch> batches) {
  auto scores = per_block_row_mean(model, batches, [](const auto& x, const auto& y) {
    const double nx = x.norm();
    const double ny = y.norm();
    if (nx == 0.0 && ny == 0.0) return 1.0;
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return x.dot(y) / (nx * ny);
  });
  for (double& s : scores) s = 1.0 - s;
  return scores;
}

std::vector<double> rm_scores(const Model& model, std::span<const Batch> batches) {
  return per_block_row_mean(model, batches, [](const auto& x, const auto& y) {
    const double nf = (y - x).norm();
    const double ny = y.norm();
    if (nf == 0.0) return 0.0;
    if (ny == 0.0) return 1.0;
    return nf / ny;
  });
}

ActiveSet draw_active_set(const SamplingPlan& plan, std::uint64_t seed, Index period, DrawMode mode) {
  ActiveSet out;
  out.period = period;
  const auto ctr = static_cast<std::uint64_t>(period);
  if (mode == DrawMode::kBernoulli) {
    for (Index l = 0; l < plan.n_layers(); ++l) {
      if (philox_uniform(seed, ctr, static_cast<std::uint64_t>(l)) < plan.p[static_cast<size_t>(l)]) {
        out.blocks.push_back(l);
      }
    }
    return out;
  }
  // Systematic sampling: grid points u, u+1, u+2, ... over the cumulative
  // probabilities; block l is chosen when a point lands in its interval.
  const double u = philox_uniform(seed, ctr, kSystematicTag);
  double lower = 0.0;
  for (Index l = 0; l < plan.n_layers(); ++l) {
    const double upper = lower + plan.p[static_cast<size_t>(l)];
    if (std::ceil(lower - u) < std::ceil(upper - u)) out.blocks.push_back(l);
    lower = upper;
  }
  return out;
}

}  // namespace ows
