#include "ows/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "ows/archive.hpp"
#include "ows/error.hpp"
#include "ows/random.hpp"

namespace ows {
namespace {

constexpr std::uint64_t kDrawSeedTag = 0x5A4D;

bool needs_profile(SamplingMethod m) { return m == SamplingMethod::kOws || m == SamplingMethod::kOwsReverse; }

bool data_dependent(SamplingMethod m) {
  return needs_profile(m) || m == SamplingMethod::kBi || m == SamplingMethod::kRm;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  const auto n = static_cast<double>(model.n_layers);
  if (!(gamma > 0.0) || gamma > n) {
    throw ConfigError("gamma " + std::to_string(gamma) + " outside (0, n_layers=" + std::to_string(model.n_layers) +
                      "]");
  }
  Index min_dim = model.d_model;
  for (const auto& [r, c] : block_matrix_shapes(model)) min_dim = std::min({min_dim, r, c});
  if (rank < 1 || rank > min_dim) {
    throw ConfigError("rank " + std::to_string(rank) + " outside [1, " + std::to_string(min_dim) +
                      "] (smallest block matrix dimension)");
  }
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (sample_period < 1) throw ConfigError("sample_period must be >= 1");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (total_steps % sample_period != 0) {
    throw ConfigError("total_steps (" + std::to_string(total_steps) + ") must be divisible by sample_period (" +
                      std::to_string(sample_period) + ")");
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (refresh_every < 1) throw ConfigError("refresh_every must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (reprofile_every < 0) throw ConfigError("reprofile_every must be >= 0");
  if (calibration_batches < 1) throw ConfigError("calibration_batches must be >= 1");
  if (eval_batches < 1) throw ConfigError("eval_batches must be >= 1");
  if (task.batch_size < 1) throw ConfigError("task.batch_size must be >= 1");
}

bool TrainConfig::low_rank_blocks() const {
  switch (update_rule) {
    case UpdateRule::kFullRank: return false;
    case UpdateRule::kLowRank: return true;
    case UpdateRule::kAuto: break;
  }
  return method != SamplingMethod::kLisaUniform && method != SamplingMethod::kLisaD;
}

AdamConfig TrainConfig::adam() const {
  AdamConfig a;
  a.lr = lr;
  a.beta1 = beta1;
  a.beta2 = beta2;
  a.eps = eps;
  a.moment_free = sgd_mode;
  return a;
}

double TrainConfig::lr_at(Index step) const {
  if (lr_schedule == LrSchedule::kConstant) return lr;
  return lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

TrainConfig TrainConfig::large_scale_preset() {
  TrainConfig c;
  c.gamma = 5.0;
  c.rank = 128;
  c.refresh_every = kDefaultRefreshEvery;
  c.model.n_layers = 32;
  c.model.d_model = 4096;
  c.model.d_hidden = 11008;
  return c;
}

Index Trainer::BlockState::element_count() const {
  Index n = 0;
  for (const auto& s : full) n += s.element_count();
  for (const auto& s : low_rank) n += s.element_count();
  return n;
}

Trainer::Trainer(TrainConfig config, Model model, const TaskStream& data, std::optional<SamplingPlan> plan_override)
    : config_(std::move(config)), model_(std::move(model)), data_(data) {
  config_.validate();
  if (!(model_.spec == config_.model)) throw ConfigError("trainer: model spec differs from config.model");
  if (!(data_.spec() == config_.model)) throw ConfigError("trainer: task spec differs from config.model");
  const auto n = static_cast<size_t>(config_.model.n_layers);
  live_.resize(n);
  parked_.resize(n);
  log_.activation_counts.assign(n, 0);
  const AdamConfig adam = config_.adam();
  embedding_state_ = AdamState::zeros(model_.embedding.rows(), model_.embedding.cols(), adam);
  head_state_ = AdamState::zeros(model_.head.rows(), model_.head.cols(), adam);
  if (plan_override) {
    if (plan_override->n_layers() != config_.model.n_layers) {
      throw ConfigError("plan covers " + std::to_string(plan_override->n_layers()) + " layers, model has " +
                        std::to_string(config_.model.n_layers));
    }
    plan_ = std::move(*plan_override);
  } else {
    build_plan();
  }
  log_.initial_eval_loss = evaluate(model_, data_, config_.eval_batches);
}

void Trainer::build_plan() {
  const Index n = config_.model.n_layers;
  const double gamma = config_.gamma;
  switch (config_.method) {
    case SamplingMethod::kLisaUniform:
      plan_ = lisa_probabilities(n, gamma);
      return;
    case SamplingMethod::kLisaD:
      plan_ = lisa_d_probabilities(n, gamma);
      return;
    default:
      break;
  }
  const auto calib = data_.calibration_batches(config_.calibration_batches);
  if (needs_profile(config_.method)) {
    profile_ = build_profile(model_, calibrate(model_, calib), config_.tau);
    const bool flat = std::all_of(profile_->d.begin(), profile_->d.end(), [](double v) { return v == 0.0; });
    if (flat) {
      char tau[32];
      std::snprintf(tau, sizeof(tau), "%g", config_.tau);
      log_.warnings.push_back(std::string("outlier profile is all zero at tau=") + tau +
                              "; falling back to the uniform plan");
      plan_ = lisa_probabilities(n, gamma);
      plan_.method = config_.method;
      return;
    }
    plan_ = config_.method == SamplingMethod::kOws ? ows_probabilities(*profile_, gamma)
                                                   : reverse_ows_probabilities(*profile_, gamma);
    return;
  }
  const auto scores = config_.method == SamplingMethod::kBi ? bi_scores(model_, calib) : rm_scores(model_, calib);
  plan_ = plan_from_scores(config_.method, scores, gamma);
}

Trainer::BlockState Trainer::fresh_block_state() const {
  BlockState st;
  const AdamConfig adam = config_.adam();
  for (const auto& [r, c] : block_matrix_shapes(config_.model)) {
    if (config_.low_rank_blocks()) {
      st.low_rank.push_back(LowRankOptState::create(r, c, config_.rank, config_.refresh_every, adam));
    } else {
      st.full.push_back(AdamState::zeros(r, c, adam));
    }
  }
  return st;
}

void Trainer::begin_period(Index period) {
  if (config_.reprofile_every > 0 && period > 0 && period % config_.reprofile_every == 0 &&
      data_dependent(config_.method)) {
    build_plan();
  }
  active_ = draw_active_set(plan_, derive_seed(config_.seed, kDrawSeedTag), period, config_.draw_mode);
  const auto mask = active_.mask(config_.model.n_layers);
  for (size_t l = 0; l < mask.size(); ++l) {
    if (live_[l] && !mask[l]) {
      if (config_.retention == StateRetention::kPersist) parked_[l] = std::move(live_[l]);
      live_[l].reset();
    } else if (!live_[l] && mask[l]) {
      if (parked_[l]) {
        live_[l] = std::move(parked_[l]);
        parked_[l].reset();
      } else {
        live_[l] = fresh_block_state();
      }
    }
    if (mask[l]) ++log_.activation_counts[l];
  }
  log_.periods.push_back(active_);
}

void Trainer::step() {
  if (finished()) throw StateError("trainer: all " + std::to_string(config_.total_steps) + " steps already run");
  const auto started = std::chrono::steady_clock::now();
  if (step_ % config_.sample_period == 0) begin_period(step_ / config_.sample_period);

  const Batch batch = data_.train_batch(step_);
  const ForwardTrace trace = forward(model_, batch);
  if (!std::isfinite(trace.loss)) {
    throw DivergenceError("training diverged: loss is " + std::to_string(trace.loss) + " at step " +
                          std::to_string(step_));
  }
  BackwardMask mask;
  mask.blocks = active_.mask(config_.model.n_layers);
  const GradientSet grads = backward(model_, trace, mask);

  const double lr = config_.lr_at(step_);
  embedding_state_.config.lr = lr;
  head_state_.config.lr = lr;
  model_.embedding += adam_step(embedding_state_, *grads.embedding);
  model_.head += adam_step(head_state_, *grads.head);
  for (Index l : active_.blocks) {
    const auto li = static_cast<size_t>(l);
    BlockState& st = *live_[li];
    auto& weights = model_.blocks[li].weights;
    for (size_t k = 0; k < weights.size(); ++k) {
      const Matrix& g = *grads.blocks[li][k];
      if (config_.low_rank_blocks()) {
        st.low_rank[k].adam.config.lr = lr;
        weights[k] += low_rank_step(st.low_rank[k], g);
      } else {
        st.full[k].config.lr = lr;
        weights[k] += adam_step(st.full[k], g);
      }
    }
  }

  last_grad_elems_ = grads.element_count();
  last_act_elems_ = trace.activation_element_count();
  log_.loss.push_back(trace.loss);
  log_.lr.push_back(lr);
  ++step_;
  log_.step_seconds.push_back(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  if (finished()) log_.final_eval_loss = evaluate(model_, data_, config_.eval_batches);
}

void Trainer::run() {
  while (!finished()) step();
}

Index Trainer::live_optimizer_elements() const {
  Index n = embedding_state_.element_count() + head_state_.element_count();
  for (const auto& s : live_) n += s ? s->element_count() : 0;
  return n;
}

Index Trainer::parked_optimizer_elements() const {
  Index n = 0;
  for (const auto& s : parked_) n += s ? s->element_count() : 0;
  return n;
}

Index Trainer::blocks_holding_state() const {
  return static_cast<Index>(std::count_if(live_.begin(), live_.end(), [](const auto& s) { return s.has_value(); }));
}

void Trainer::save_optimizer_state(const std::filesystem::path& manifest) const {
  std::vector<NamedTensor> tensors;
  nlohmann::json states = nlohmann::json::array();
  auto add_adam = [&](const std::string& name, const AdamState& s, nlohmann::json entry) {
    entry["name"] = name;
    entry["step"] = s.step;
    entry["moments"] = !s.m.size() ? nlohmann::json::array() : nlohmann::json{name + ".m", name + ".v"};
    if (s.m.size()) {
      tensors.push_back({name + ".m", s.m});
      tensors.push_back({name + ".v", s.v});
    }
    states.push_back(std::move(entry));
  };
  add_adam("embedding", embedding_state_, {{"kind", "full-rank"}});
  add_adam("head", head_state_, {{"kind", "full-rank"}});
  const auto names = block_matrix_names(config_.model.arch);
  for (size_t l = 0; l < live_.size(); ++l) {
    const std::optional<BlockState>& st = live_[l] ? live_[l] : parked_[l];
    if (!st) continue;
    const std::string where = live_[l] ? "live" : "parked";
    for (size_t k = 0; k < names.size(); ++k) {
      const std::string name = "blocks." + std::to_string(l) + "." + std::string(names[k]);
      if (k < st->full.size()) {
        add_adam(name, st->full[k], {{"kind", "full-rank"}, {"block", l}, {"holder", where}});
        continue;
      }
      const LowRankOptState& s = st->low_rank[k];
      nlohmann::json entry = {{"kind", "low-rank"},  {"block", l},
                              {"holder", where},     {"rank", s.rank},
                              {"active_steps", s.active_steps}, {"projector", nullptr}};
      if (s.projector) {
        entry["projector"] = name + ".projector";
        entry["side"] = s.projector->side == ProjectionSide::kLeft ? "left" : "right";
        tensors.push_back({name + ".projector", s.projector->basis});
      }
      add_adam(name, s.adam, std::move(entry));
    }
  }
  write_archive(manifest, {{"format", "ows-optimizer"}, {"step", step_}, {"states", states}}, tensors);
}

std::pair<Model, TrainLog> train(const TrainConfig& config, Model model, const TaskStream& data) {
  Trainer trainer(config, std::move(model), data);
  trainer.run();
  TrainLog log = trainer.log();
  return {std::move(trainer).take_model(), std::move(log)};
}

double evaluate(const Model& model, std::span<const Batch> batches) {
  if (batches.empty()) throw ConfigError("evaluate: empty split");
  double total = 0.0;
  for (const Batch& b : batches) total += forward(model, b).loss;
  return total / static_cast<double>(batches.size());
}

double evaluate(const Model& model, const TaskStream& data, Index n_batches) {
  return evaluate(model, data.eval_batches(n_batches));
}

}  // namespace ows
