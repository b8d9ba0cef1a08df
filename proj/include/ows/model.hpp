#ifndef OWS_MODEL_HPP
#define OWS_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ows/linalg.hpp"

namespace ows {

enum class Arch { kMlpStack, kTinyTransformer };

std::string_view arch_name(Arch arch);
/// Throws ConfigError naming the tag when it is not a known architecture.
Arch parse_arch(std::string_view tag);

struct ModelSpec {
  Arch arch = Arch::kMlpStack;
  Index n_layers = 8;  // sampled middle blocks
  Index d_model = 16;
  Index d_hidden = 32;
  Index n_heads = 2;    // transformer only
  Index vocab = 64;     // transformer only
  Index seq_len = 16;   // transformer only
  bool causal = false;  // transformer only

  void validate() const;
  Index head_dim() const { return d_model / n_heads; }

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Names of the weight matrices inside one block, in storage order.
std::span<const std::string_view> block_matrix_names(Arch arch);
/// (rows, cols) of every block matrix, in storage order.
std::vector<std::pair<Index, Index>> block_matrix_shapes(const ModelSpec& spec);
/// Number of RMS-norm gain vectors per block.
Index block_norm_count(Arch arch);

struct Block {
  std::vector<Matrix> weights;     // see block_matrix_names
  std::vector<Vector> norm_gains;  // fixed (not trained), length d_model each
};

// The embedding ("bottom") and head ("top") are always trained; only blocks are
// subject to layer sampling.
struct Model {
  ModelSpec spec;
  Matrix embedding;  // mlp: d_model x d_model; transformer: vocab x d_model
  std::vector<Block> blocks;
  Matrix head;  // mlp: d_model x d_model; transformer: vocab x d_model

  Index trainable_parameter_count() const;
  Index block_parameter_count() const;
  /// Every stored element, including the fixed norm gains.
  Index stored_element_count() const;
};

struct Batch {
  // mlp-stack regression: (batch_size x d_model) inputs and targets.
  Matrix inputs;
  Matrix targets;
  // tiny-transformer: batch_size sequences of seq_len ids, row-major.
  std::vector<int> tokens;
  std::vector<int> labels;
  Index batch_size = 0;
  Index seq_len = 1;

  /// Rows of the flattened (batch * sequence, features) activation layout.
  Index rows() const { return batch_size * seq_len; }
};

struct BlockCache {
  Matrix input;  // block input h, rows x d_model
  Vector rms1;
  Matrix normed1;  // mlp: input of w1; transformer: input of wq/wk/wv
  // transformer attention
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per (sequence, head), seq_len x seq_len
  Matrix attn;                // input of wo
  Matrix mid;                 // residual stream after attention
  Vector rms2;
  Matrix normed2;  // input of up
  Matrix pre_act;  // transformer only
  Matrix act;      // mlp: input of w2; transformer: input of down

  /// The activation X that multiplies block matrix `k` (rows x C_in).
  const Matrix& matrix_input(Arch arch, Index k) const;
};

struct ForwardTrace {
  Arch arch = Arch::kMlpStack;
  Index rows = 0;
  Index batch_size = 0;
  Index seq_len = 1;
  Matrix embed_input;  // mlp only
  std::vector<int> tokens;
  std::vector<int> labels;
  Matrix targets;
  std::vector<BlockCache> blocks;
  Matrix final_hidden;
  Vector final_rms;     // transformer only
  Matrix final_normed;  // transformer only
  Matrix output;        // mlp: predictions; transformer: token probabilities
  double loss = 0.0;
  std::uint64_t model_fingerprint = 0;

  /// Input activations of block l; l == n_layers gives the final hidden state.
  const Matrix& block_input(Index l) const;
  const Matrix& block_output(Index l) const { return block_input(l + 1); }

  /// Elements retained for the backward pass (excludes labels and targets).
  Index activation_element_count() const;
};

/// Which units receive weight gradients. Activation gradients always flow
/// through frozen blocks that sit above a trainable unit.
struct BackwardMask {
  bool embedding = true;
  bool head = true;
  std::vector<bool> blocks;

  static BackwardMask all(Index n_layers);
};

struct GradientSet {
  std::optional<Matrix> embedding;
  std::optional<Matrix> head;
  std::vector<std::vector<std::optional<Matrix>>> blocks;

  Index element_count() const;
};

Model init_model(const ModelSpec& spec, std::uint64_t seed);

/// FNV-1a hash over the spec and every stored parameter.
std::uint64_t fingerprint(const Model& model);

ForwardTrace forward(const Model& model, const Batch& batch);

/// Gradients of loss_scale * loss. Throws StateError when the trace was not
/// produced from the current parameters of `model`.
GradientSet backward(const Model& model, const ForwardTrace& trace,
                     const BackwardMask& mask = {}, double loss_scale = 1.0);

void save_checkpoint(const Model& model, const std::filesystem::path& manifest);
Model load_checkpoint(const std::filesystem::path& manifest);

}  // namespace ows

#endif  // OWS_MODEL_HPP
