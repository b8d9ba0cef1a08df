#include "ows/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "ows/archive.hpp"
#include "ows/error.hpp"
#include "ows/optimizer.hpp"
#include "ows/outlier.hpp"
#include "ows/random.hpp"

namespace ows {
namespace {

enum SeedTag : std::uint64_t {
  kTrainSplit = 1,
  kEvalSplit = 2,
  kCalibSplit = 3,
  kStudent = 10,
  kTeacher = 11,
  kSpikes = 12,
  kSmoothing = 13,
  kDelta = 14,
  kRetry = 15,
};

constexpr int kMaxSignalAttempts = 8;

void spike_block(Block& blk, const TaskOptions& opt, std::uint64_t seed, Index layer) {
  for (size_t k = 0; k < blk.weights.size(); ++k) {
    Matrix& w = blk.weights[k];
    const auto count = std::max<Index>(1, std::llround(opt.injection_fraction * static_cast<double>(w.size())));
    Rng rng(seed, static_cast<std::uint64_t>(layer) * 64 + k);
    std::set<Index> chosen;
    while (static_cast<Index>(chosen.size()) < std::min(count, w.size())) {
      chosen.insert(static_cast<Index>(rng.below(static_cast<std::uint64_t>(w.size()))));
    }
    for (Index flat : chosen) w(flat / w.cols(), flat % w.cols()) *= opt.injection_scale;
  }
}

// A few full-model Adam steps pulling the spiked model back toward the
// function it computed before injection.
void smooth(Model& model, const Model& reference, const TaskOptions& opt, std::uint64_t seed) {
  if (opt.smoothing_steps <= 0) return;
  AdamConfig cfg;
  cfg.lr = opt.smoothing_lr;
  std::vector<AdamState> states;
  auto state_for = [&](size_t slot, const Matrix& w) -> AdamState& {
    if (slot >= states.size()) states.push_back(AdamState::zeros(w.rows(), w.cols(), cfg));
    return states[slot];
  };
  for (Index s = 0; s < opt.smoothing_steps; ++s) {
    Rng rng(seed, static_cast<std::uint64_t>(s));
    Batch b;
    b.batch_size = opt.batch_size;
    b.inputs = rng.normal_matrix(opt.batch_size, model.spec.d_model);
    b.targets = predict(reference, b.inputs);
    const auto trace = forward(model, b);
    const auto g = backward(model, trace);
    size_t slot = 0;
    model.embedding += adam_step(state_for(slot++, model.embedding), *g.embedding);
    for (size_t l = 0; l < model.blocks.size(); ++l) {
      for (size_t k = 0; k < model.blocks[l].weights.size(); ++k) {
        Matrix& w = model.blocks[l].weights[k];
        w += adam_step(state_for(slot++, w), *g.blocks[l][k]);
      }
    }
    model.head += adam_step(state_for(slot++, model.head), *g.head);
  }
}

}  // namespace

SignalSeparation signal_separation(const Model& model, std::span<const Batch> calibration,
                                   const std::vector<Index>& signal_layers) {
  const auto profile = build_profile(model, calibrate(model, calibration), kDefaultTau);
  SignalSeparation sep;
  Index in_s = 0;
  for (Index l = 0; l < model.spec.n_layers; ++l) {
    const bool signal = std::find(signal_layers.begin(), signal_layers.end(), l) != signal_layers.end();
    (signal ? sep.signal : sep.rest) += profile.d[static_cast<size_t>(l)];
    in_s += signal ? 1 : 0;
  }
  if (in_s > 0) sep.signal /= static_cast<double>(in_s);
  if (in_s < model.spec.n_layers) sep.rest /= static_cast<double>(model.spec.n_layers - in_s);
  return sep;
}

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kTeacherStudent: return "teacher-student";
    case TaskKind::kSeqCopy: return "seq-copy";
    case TaskKind::kLayerSignal: return "layer-signal";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  for (auto k : {TaskKind::kTeacherStudent, TaskKind::kSeqCopy, TaskKind::kLayerSignal}) {
    if (task_name(k) == name) return k;
  }
  throw ConfigError("unknown task '" + std::string(name) + "' (expected teacher-student, seq-copy or layer-signal)");
}

nlohmann::json TaskOptions::to_json() const {
  return {{"kind", task_name(kind)},
          {"batch_size", batch_size},
          {"signal_layers", signal_layers},
          {"injection_scale", injection_scale},
          {"injection_fraction", injection_fraction},
          {"smoothing_steps", smoothing_steps},
          {"smoothing_lr", smoothing_lr},
          {"delta_rank", delta_rank},
          {"delta_scale", delta_scale}};
}

Matrix predict(const Model& model, const Matrix& inputs) {
  if (model.spec.arch != Arch::kMlpStack) throw ConfigError("predict: regression targets need an mlp-stack");
  Batch b;
  b.batch_size = inputs.rows();
  b.inputs = inputs;
  b.targets = Matrix::Zero(inputs.rows(), model.spec.d_model);
  return forward(model, b).output;
}

Batch TaskStream::make_batch(std::uint64_t split_seed, Index index) const {
  Rng rng(split_seed, static_cast<std::uint64_t>(index));
  Batch b;
  b.batch_size = options_.batch_size;
  if (spec_.arch == Arch::kMlpStack) {
    b.inputs = rng.normal_matrix(b.batch_size, spec_.d_model);
    b.targets = predict(*teacher_, b.inputs);
    return b;
  }
  b.seq_len = spec_.seq_len;
  const auto n = static_cast<size_t>(b.rows());
  b.tokens.resize(n);
  b.labels.resize(n);
  for (auto& t : b.tokens) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec_.vocab)));
  const auto L = static_cast<size_t>(b.seq_len);
  for (size_t s = 0; s < static_cast<size_t>(b.batch_size); ++s) {
    for (size_t t = 0; t < L; ++t) b.labels[s * L + t] = b.tokens[s * L + (t + L - 1) % L];
  }
  return b;
}

Batch TaskStream::train_batch(Index index) const { return make_batch(train_seed_, index); }

std::vector<Batch> TaskStream::eval_batches(Index count) const {
  if (count < 1) throw ConfigError("eval split must contain at least one batch");
  std::vector<Batch> out;
  for (Index i = 0; i < count; ++i) out.push_back(make_batch(eval_seed_, i));
  return out;
}

std::vector<Batch> TaskStream::calibration_batches(Index count) const {
  if (count < 1) throw ConfigError("calibration needs at least one batch");
  std::vector<Batch> out;
  for (Index i = 0; i < count; ++i) out.push_back(make_batch(calib_seed_, i));
  return out;
}

TaskStream make_task(const TaskOptions& options, const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (options.batch_size < 1) throw ConfigError("task.batch_size must be >= 1");
  const bool mlp = spec.arch == Arch::kMlpStack;
  if (options.kind == TaskKind::kSeqCopy && mlp) throw ConfigError("task seq-copy requires arch tiny-transformer");
  if (options.kind != TaskKind::kSeqCopy && !mlp) {
    throw ConfigError("task " + std::string(task_name(options.kind)) + " requires arch mlp-stack");
  }

  TaskStream ts;
  ts.options_ = options;
  ts.spec_ = spec;
  ts.train_seed_ = derive_seed(seed, kTrainSplit);
  ts.eval_seed_ = derive_seed(seed, kEvalSplit);
  ts.calib_seed_ = derive_seed(seed, kCalibSplit);

  switch (options.kind) {
    case TaskKind::kSeqCopy:
      ts.base_ = init_model(spec, derive_seed(seed, kStudent));
      break;
    case TaskKind::kTeacherStudent:
      ts.base_ = init_model(spec, derive_seed(seed, kStudent));
      ts.teacher_ = init_model(spec, derive_seed(seed, kTeacher));
      break;
    case TaskKind::kLayerSignal: {
      if (options.signal_layers.empty()) throw ConfigError("task.signal_layers must not be empty");
      for (Index l : options.signal_layers) {
        if (l < 0 || l >= spec.n_layers) {
          throw ConfigError("task.signal_layers entry " + std::to_string(l) + " outside [0, " +
                            std::to_string(spec.n_layers) + ")");
        }
      }
      if (options.delta_rank < 1) throw ConfigError("task.delta_rank must be >= 1");
      // Regenerate from a fresh seed until the signal blocks clearly dominate the profile.
      Model original;
      Model pretrained;
      for (int attempt = 0;; ++attempt) {
        const std::uint64_t s = attempt == 0 ? seed : derive_seed(seed, kRetry + 16 * static_cast<std::uint64_t>(attempt));
        original = init_model(spec, derive_seed(s, kStudent));
        pretrained = original;
        for (Index l : options.signal_layers) {
          spike_block(pretrained.blocks[static_cast<size_t>(l)], options, derive_seed(s, kSpikes), l);
        }
        smooth(pretrained, original, options, derive_seed(s, kSmoothing));
        ts.teacher_ = pretrained;  // calibration only reads the inputs
        const auto sep = signal_separation(pretrained, ts.calibration_batches(kDefaultCalibrationBatches),
                                           options.signal_layers);
        if (sep.signal > 0.0 && sep.signal >= 2.0 * sep.rest) break;
        if (attempt + 1 == kMaxSignalAttempts) {
          throw StateError("layer-signal: signal blocks mean D " + std::to_string(sep.signal) +
                           " < 2x remaining blocks mean D " + std::to_string(sep.rest) + " after " +
                           std::to_string(kMaxSignalAttempts) + " seeds");
        }
      }

      Model teacher = pretrained;
      for (Index l : options.signal_layers) {
        auto& blk = teacher.blocks[static_cast<size_t>(l)];
        for (size_t k = 0; k < blk.weights.size(); ++k) {
          Matrix& w = blk.weights[k];
          Rng rng(derive_seed(seed, kDelta), static_cast<std::uint64_t>(l) * 64 + k);
          const Matrix a = rng.normal_matrix(w.rows(), options.delta_rank);
          const Matrix b = rng.normal_matrix(w.cols(), options.delta_rank);
          Matrix delta = a * b.transpose();
          delta *= options.delta_scale * original.blocks[static_cast<size_t>(l)].weights[k].norm() / delta.norm();
          w += delta;
        }
      }
      ts.base_ = std::move(pretrained);
      ts.teacher_ = std::move(teacher);
      break;
    }
  }
  return ts;
}

void dump_batches(std::span<const Batch> batches, const std::filesystem::path& manifest) {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = {{"format", "ows-batches"}, {"count", batches.size()}};
  for (size_t i = 0; i < batches.size(); ++i) {
    const Batch& b = batches[i];
    const auto prefix = "batch." + std::to_string(i) + ".";
    if (!b.tokens.empty()) {
      Matrix tok(b.batch_size, b.seq_len);
      Matrix lab(b.batch_size, b.seq_len);
      for (Index r = 0; r < b.rows(); ++r) {
        tok(r / b.seq_len, r % b.seq_len) = b.tokens[static_cast<size_t>(r)];
        lab(r / b.seq_len, r % b.seq_len) = b.labels[static_cast<size_t>(r)];
      }
      tensors.push_back({prefix + "tokens", std::move(tok)});
      tensors.push_back({prefix + "labels", std::move(lab)});
    } else {
      tensors.push_back({prefix + "inputs", b.inputs});
      tensors.push_back({prefix + "targets", b.targets});
    }
  }
  write_archive(manifest, meta, tensors);
}

std::vector<Batch> load_batches(const std::filesystem::path& manifest) {
  const auto archive = read_archive(manifest);
  if (archive.meta.value("format", "") != "ows-batches") throw FormatError("manifest field 'format' is not ows-batches");
  const auto count = archive.meta.value("count", size_t{0});
  std::vector<Batch> out;
  for (size_t i = 0; i < count; ++i) {
    const auto prefix = "batch." + std::to_string(i) + ".";
    Batch b;
    const bool seq = std::any_of(archive.tensors.begin(), archive.tensors.end(),
                                 [&](const NamedTensor& t) { return t.name == prefix + "tokens"; });
    if (seq) {
      const Matrix& tok = archive.at(prefix + "tokens");
      const Matrix& lab = archive.at(prefix + "labels");
      b.batch_size = tok.rows();
      b.seq_len = tok.cols();
      for (Index r = 0; r < tok.rows(); ++r) {
        for (Index c = 0; c < tok.cols(); ++c) {
          b.tokens.push_back(static_cast<int>(tok(r, c)));
          b.labels.push_back(static_cast<int>(lab(r, c)));
        }
      }
    } else {
      b.inputs = archive.at(prefix + "inputs");
      b.targets = archive.at(prefix + "targets");
      b.batch_size = b.inputs.rows();
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace ows
