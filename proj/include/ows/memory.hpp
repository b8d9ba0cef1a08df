#ifndef OWS_MEMORY_HPP
#define OWS_MEMORY_HPP

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ows/model.hpp"
#include "ows/sampling.hpp"

namespace ows {

class Trainer;

enum class MemoryMethod { kFullFt, kLora, kGalore, kLisa, kOws };

inline constexpr MemoryMethod kAllMemoryMethods[] = {MemoryMethod::kFullFt, MemoryMethod::kLora,
                                                     MemoryMethod::kGalore, MemoryMethod::kLisa,
                                                     MemoryMethod::kOws};

std::string_view memory_method_name(MemoryMethod method);

struct BatchShape {
  Index batch_size = 1;
  Index seq_len = 1;  // ignored for mlp-stack
};

struct MemoryReport {
  MemoryMethod method = MemoryMethod::kFullFt;
  Index weights_elems = 0;
  Index grad_elems = 0;
  Index opt_elems = 0;
  Index activation_elems = 0;
  Index bytes_per_elem = 2;

  Index total_elems() const { return weights_elems + grad_elems + opt_elems + activation_elems; }
  Index total_bytes() const { return bytes_per_elem * total_elems(); }
  nlohmann::json to_json() const;
};

/// Forward-cache elements retained for backward by one training step.
Index activation_elements(const ModelSpec& spec, BatchShape batch);
/// Projector (min side x r) plus two low-rank Adam moments (r x max side).
Index low_rank_state_elements(Index rows, Index cols, Index rank);
/// LoRA adapter pair A (r x cols), B (rows x r).
Index lora_adapter_elements(Index rows, Index cols, Index rank);

/// Peak element counts of one fine-tuning step.
///
/// Sampled methods (lisa, ows) charge `gamma` blocks: the expected active
/// count by default, ceil(gamma) in worst-case mode. Embedding and head are
/// trained full-rank by every method except LoRA, which freezes them.
MemoryReport account(const ModelSpec& spec, MemoryMethod method, Index rank, double gamma, BatchShape batch,
                     Index bytes_per_elem = 2, bool worst_case = false);

/// Memory method that describes how a sampling run updates its blocks.
MemoryMethod memory_method_for(SamplingMethod sampling, bool low_rank_blocks);

/// Element counts of the matrices a trainer actually holds after its last step.
MemoryReport measure_live(const Trainer& trainer, Index bytes_per_elem = 2);

std::string render_table(std::span<const MemoryReport> reports);

}  // namespace ows

#endif  // OWS_MEMORY_HPP
