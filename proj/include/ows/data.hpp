#ifndef OWS_DATA_HPP
#define OWS_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ows/model.hpp"

namespace ows {

enum class TaskKind {
  kTeacherStudent,  // mlp-stack: regress a frozen random teacher
  kSeqCopy,         // tiny-transformer: predict the previous token (cyclic)
  kLayerSignal,     // mlp-stack: pretrained model with outlier-heavy blocks carrying the task signal
};

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view name);

inline constexpr Index kToyVocab = 64;

struct TaskOptions {
  TaskKind kind = TaskKind::kTeacherStudent;
  Index batch_size = 32;
  // layer-signal construction
  std::vector<Index> signal_layers{1};  // 0-based block indices (the set S)
  double injection_scale = 50.0;        // spike multiplier
  double injection_fraction = 0.001;    // share of each S matrix that is spiked (at least one entry)
  Index smoothing_steps = 10;           // brief Adam fit back to the pre-spike function
  double smoothing_lr = 1e-3;
  Index delta_rank = 2;      // rank of the fine-tuning shift applied to S in the teacher
  double delta_scale = 0.1;  // shift norm relative to the matrix norm

  nlohmann::json to_json() const;
};

class TaskStream {
 public:
  TaskKind kind() const { return options_.kind; }
  const TaskOptions& options() const { return options_; }
  const ModelSpec& spec() const { return spec_; }

  /// Deterministic training batch number `index`.
  Batch train_batch(Index index) const;
  /// Held-out split (its own seed; disjoint from training draws).
  std::vector<Batch> eval_batches(Index count) const;
  /// Calibration split used for outlier profiles and block scores.
  std::vector<Batch> calibration_batches(Index count) const;

  /// Model that fine-tuning starts from.
  const Model& base_model() const { return base_; }
  /// Frozen target generator; absent for seq-copy.
  const std::optional<Model>& teacher() const { return teacher_; }

  friend TaskStream make_task(const TaskOptions& options, const ModelSpec& spec, std::uint64_t seed);

 private:
  Batch make_batch(std::uint64_t split_seed, Index index) const;

  TaskOptions options_;
  ModelSpec spec_;
  std::uint64_t train_seed_ = 0;
  std::uint64_t eval_seed_ = 0;
  std::uint64_t calib_seed_ = 0;
  Model base_;
  std::optional<Model> teacher_;
};

/// Throws ConfigError when the task kind does not fit the architecture. The
/// layer-signal construction is retried with derived seeds until the signal
/// blocks' mean outlier ratio is at least twice that of the other blocks;
/// StateError if that never happens.
TaskStream make_task(const TaskOptions& options, const ModelSpec& spec, std::uint64_t seed);

/// Mean layer outlier ratio (default tau) over the signal blocks and over the rest.
struct SignalSeparation {
  double signal = 0.0;
  double rest = 0.0;
};

SignalSeparation signal_separation(const Model& model, std::span<const Batch> calibration,
                                   const std::vector<Index>& signal_layers);

/// mlp-stack predictions for a (rows x d_model) input.
Matrix predict(const Model& model, const Matrix& inputs);

void dump_batches(std::span<const Batch> batches, const std::filesystem::path& manifest);
std::vector<Batch> load_batches(const std::filesystem::path& manifest);

}  // namespace ows

#endif  // OWS_DATA_HPP
