#include "ows/memory.hpp"

#include <cmath>
#include <cstdio>

#include "ows/error.hpp"
#include "ows/trainer.hpp"

namespace ows {

std::string_view memory_method_name(MemoryMethod method) {
  switch (method) {
    case MemoryMethod::kFullFt: return "full-ft";
    case MemoryMethod::kLora: return "lora";
    case MemoryMethod::kGalore: return "galore";
    case MemoryMethod::kLisa: return "lisa";
    case MemoryMethod::kOws: return "ows";
  }
  return "?";
}

nlohmann::json MemoryReport::to_json() const {
  return {{"method", memory_method_name(method)},
          {"weights_elems", weights_elems},
          {"grad_elems", grad_elems},
          {"opt_elems", opt_elems},
          {"activation_elems", activation_elems},
          {"bytes_per_elem", bytes_per_elem},
          {"total_bytes", total_bytes()}};
}

Index activation_elements(const ModelSpec& spec, BatchShape batch) {
  const Index d = spec.d_model;
  const Index f = spec.d_hidden;
  if (spec.arch == Arch::kMlpStack) {
    const Index r = batch.batch_size;
    const Index per_block = r * d + r + r * d + r * f;
    return r * d + spec.n_layers * per_block + r * d + r * d;
  }
  const Index r = batch.batch_size * batch.seq_len;
  const Index attention = batch.batch_size * spec.n_heads * batch.seq_len * batch.seq_len;
  const Index per_block = 8 * r * d + 2 * r + attention + 2 * r * f;
  return spec.n_layers * per_block + r * d + r + r * d + r * spec.vocab;
}

Index low_rank_state_elements(Index rows, Index cols, Index rank) {
  return std::min(rows, cols) * rank + 2 * rank * std::max(rows, cols);
}

Index lora_adapter_elements(Index rows, Index cols, Index rank) { return rank * (rows + cols); }

MemoryReport account(const ModelSpec& spec, MemoryMethod method, Index rank, double gamma, BatchShape batch,
                     Index bytes_per_elem, bool worst_case) {
  spec.validate();
  const auto shapes = block_matrix_shapes(spec);
  const bool uses_rank = method == MemoryMethod::kLora || method == MemoryMethod::kGalore || method == MemoryMethod::kOws;
  if (uses_rank) {
    for (const auto& [r, c] : shapes) {
      if (rank < 1 || rank > std::min(r, c)) {
        throw ConfigError("memory: rank " + std::to_string(rank) + " exceeds block matrix " + shape_string(r, c));
      }
    }
  }
  if (!(gamma >= 0.0) || gamma > static_cast<double>(spec.n_layers)) {
    throw ConfigError("memory: gamma outside [0, n_layers]");
  }
  if (bytes_per_elem < 1) throw ConfigError("memory: bytes_per_elem must be >= 1");

  const Index io = spec.arch == Arch::kMlpStack ? spec.d_model : spec.vocab;
  const Index edge = 2 * io * spec.d_model;  // embedding + head
  Index block = 0;
  Index block_low_rank = 0;
  Index block_lora = 0;
  for (const auto& [r, c] : shapes) {
    block += r * c;
    block_low_rank += low_rank_state_elements(r, c, rank);
    block_lora += lora_adapter_elements(r, c, rank);
  }
  const Index n = spec.n_layers;
  const Index norms = n * block_norm_count(spec.arch) * spec.d_model;
  const Index params = edge + n * block;
  const double sampled = worst_case ? std::ceil(gamma) : gamma;
  auto sampled_elems = [&](Index per_block) { return static_cast<Index>(std::llround(sampled * static_cast<double>(per_block))); };

  MemoryReport rep;
  rep.method = method;
  rep.bytes_per_elem = bytes_per_elem;
  rep.weights_elems = params + norms;
  rep.activation_elems = activation_elements(spec, batch);
  switch (method) {
    case MemoryMethod::kFullFt:
      rep.grad_elems = params;
      rep.opt_elems = 2 * params;
      break;
    case MemoryMethod::kLora: {
      const Index adapters = n * block_lora;
      const Index tokens = spec.arch == Arch::kMlpStack ? batch.batch_size : batch.batch_size * batch.seq_len;
      rep.weights_elems += adapters;
      rep.grad_elems = adapters;
      rep.opt_elems = 2 * adapters;
      // x A intermediates for every adapted matrix
      rep.activation_elems += n * static_cast<Index>(shapes.size()) * tokens * rank;
      break;
    }
    case MemoryMethod::kGalore:
      rep.grad_elems = params;
      rep.opt_elems = n * block_low_rank + 2 * edge;
      break;
    case MemoryMethod::kLisa:
      rep.grad_elems = edge + sampled_elems(block);
      rep.opt_elems = 2 * edge + sampled_elems(2 * block);
      break;
    case MemoryMethod::kOws:
      rep.grad_elems = edge + sampled_elems(block);
      rep.opt_elems = 2 * edge + sampled_elems(block_low_rank);
      break;
  }
  return rep;
}

MemoryMethod memory_method_for(SamplingMethod, bool low_rank_blocks) {
  return low_rank_blocks ? MemoryMethod::kOws : MemoryMethod::kLisa;
}

MemoryReport measure_live(const Trainer& trainer, Index bytes_per_elem) {
  MemoryReport rep;
  rep.method = memory_method_for(trainer.config().method, trainer.config().low_rank_blocks());
  rep.bytes_per_elem = bytes_per_elem;
  rep.weights_elems = trainer.model().stored_element_count();
  rep.grad_elems = trainer.last_gradient_elements();
  rep.opt_elems = trainer.live_optimizer_elements();
  rep.activation_elems = trainer.last_activation_elements();
  return rep;
}

std::string render_table(std::span<const MemoryReport> reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %14s %14s %14s %14s %16s\n", "method", "weights", "gradients",
                "optimizer", "activations", "total_bytes");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-8s %14lld %14lld %14lld %14lld %16lld\n",
                  std::string(memory_method_name(r.method)).c_str(), static_cast<long long>(r.weights_elems),
                  static_cast<long long>(r.grad_elems), static_cast<long long>(r.opt_elems),
                  static_cast<long long>(r.activation_elems), static_cast<long long>(r.total_bytes()));
    out += line;
  }
  return out;
}

}  // namespace ows
