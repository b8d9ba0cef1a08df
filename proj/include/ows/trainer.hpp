#ifndef OWS_TRAINER_HPP
#define OWS_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ows/data.hpp"
#include "ows/model.hpp"
#include "ows/optimizer.hpp"
#include "ows/outlier.hpp"
#include "ows/sampling.hpp"

namespace ows {

enum class UpdateRule {
  kAuto,      // low-rank for ows, ows-reverse, bi, rm; full-rank for lisa-uniform, lisa-d
  kFullRank,
  kLowRank,
};

enum class LrSchedule { kConstant, kLinear };

/// What happens to a block's optimizer state when it drops out of the active set.
enum class StateRetention {
  kPersist,  // parked (offloaded) and restored on the next activation
  kReset,    // discarded; the next activation starts from zero moments
};

struct TrainConfig {
  SamplingMethod method = SamplingMethod::kOws;
  double gamma = 2.0;
  Index rank = 8;
  double tau = kDefaultTau;
  Index sample_period = 20;  // K
  Index total_steps = 400;   // T
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  Index refresh_every = 20;
  Index log_every = 1;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  UpdateRule update_rule = UpdateRule::kAuto;
  bool sgd_mode = false;  // moment-free diagnostic
  DrawMode draw_mode = DrawMode::kBernoulli;
  StateRetention retention = StateRetention::kPersist;
  Index reprofile_every = 0;  // periods between re-profiling; 0 = profile once
  Index calibration_batches = kDefaultCalibrationBatches;
  Index eval_batches = 4;
  TaskOptions task;
  ModelSpec model;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  bool low_rank_blocks() const;
  AdamConfig adam() const;
  double lr_at(Index step) const;

  /// Large-model preset: gamma 5, rank 128, subspace refresh every 200 steps.
  static TrainConfig large_scale_preset();
};

struct TrainLog {
  std::vector<double> loss;  // per step, before that step's update
  std::vector<double> lr;
  std::vector<ActiveSet> periods;
  std::vector<Index> activation_counts;  // per block, periods active
  std::vector<double> step_seconds;      // wall clock; excluded from file outputs
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  std::vector<std::string> warnings;
};

/// Step-wise driver for outlier-weighted layerwise sampling and its baselines.
/// Construction runs the pre-training phase (profile and plan); each step()
/// redraws the active set at period boundaries, then forward, masked backward
/// and the mixed full-rank / low-rank update.
class Trainer {
 public:
  Trainer(TrainConfig config, Model model, const TaskStream& data,
          std::optional<SamplingPlan> plan_override = std::nullopt);

  void step();
  void run();
  bool finished() const { return step_ >= config_.total_steps; }
  Index current_step() const { return step_; }

  const TrainConfig& config() const { return config_; }
  const Model& model() const { return model_; }
  Model take_model() && { return std::move(model_); }
  const TrainLog& log() const { return log_; }
  const SamplingPlan& plan() const { return plan_; }
  const std::optional<OutlierProfile>& profile() const { return profile_; }
  const ActiveSet& active_set() const { return active_; }

  // Live memory, as held right after the most recent step.
  Index live_optimizer_elements() const;
  Index parked_optimizer_elements() const;
  Index last_gradient_elements() const { return last_grad_elems_; }
  Index last_activation_elements() const { return last_act_elems_; }
  Index blocks_holding_state() const;

  /// Writes every live and parked optimizer state as a tensor archive. The
  /// manifest's "states" entry lists step counters and the tensors of each state.
  void save_optimizer_state(const std::filesystem::path& manifest) const;

 private:
  struct BlockState {
    std::vector<AdamState> full;
    std::vector<LowRankOptState> low_rank;
    Index element_count() const;
  };

  void build_plan();
  void begin_period(Index period);
  BlockState fresh_block_state() const;

  TrainConfig config_;
  Model model_;
  const TaskStream& data_;
  SamplingPlan plan_;
  std::optional<OutlierProfile> profile_;
  ActiveSet active_;
  AdamState embedding_state_;
  AdamState head_state_;
  std::vector<std::optional<BlockState>> live_;
  std::vector<std::optional<BlockState>> parked_;
  TrainLog log_;
  Index step_ = 0;
  Index last_grad_elems_ = 0;
  Index last_act_elems_ = 0;
};

std::pair<Model, TrainLog> train(const TrainConfig& config, Model model, const TaskStream& data);

/// Mean forward loss over the batches; throws ConfigError when empty.
double evaluate(const Model& model, std::span<const Batch> batches);
double evaluate(const Model& model, const TaskStream& data, Index n_batches);

}  // namespace ows

#endif  // OWS_TRAINER_HPP
