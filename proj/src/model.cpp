#include "ows/model.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <numbers>

#include "ows/archive.hpp"
#include "ows/error.hpp"
#include "ows/random.hpp"

namespace ows {
namespace {

constexpr double kNormEps = 1e-6;

constexpr std::array<std::string_view, 2> kMlpNames{"w1", "w2"};
constexpr std::array<std::string_view, 6> kTransformerNames{"wq", "wk", "wv", "wo", "up", "down"};

// Row-wise RMS normalization: out_i = gain * h_i / sqrt(mean(h_i^2) + eps).
void rms_norm(const Matrix& h, const Vector& gain, Vector& rms, Matrix& out) {
  const double d = static_cast<double>(h.cols());
  rms.resize(h.rows());
  out.resize(h.rows(), h.cols());
  for (Index i = 0; i < h.rows(); ++i) {
    rms(i) = std::sqrt(h.row(i).squaredNorm() / d + kNormEps);
    out.row(i) = (h.row(i).array() / rms(i)) * gain.transpose().array();
  }
}

Matrix rms_norm_backward(const Matrix& grad_out, const Matrix& h, const Vector& gain, const Vector& rms) {
  const double d = static_cast<double>(h.cols());
  Matrix grad(h.rows(), h.cols());
  for (Index i = 0; i < h.rows(); ++i) {
    const Eigen::RowVectorXd gd = grad_out.row(i).array() * gain.transpose().array();
    const double r = rms(i);
    const double proj = gd.dot(h.row(i));
    grad.row(i) = gd / r - h.row(i) * (proj / (d * r * r * r));
  }
  return grad;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

double positional(Index t, Index c, Index d_model) {
  const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(d_model));
  const double angle = static_cast<double>(t) * freq;
  return c % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

void softmax_rows(Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

void check_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.batch_size < 1) throw ShapeError("forward: batch_size must be >= 1");
  if (spec.arch == Arch::kMlpStack) {
    if (batch.inputs.rows() != batch.batch_size || batch.inputs.cols() != spec.d_model) {
      throw ShapeError("forward: mlp inputs are " + shape_string(batch.inputs.rows(), batch.inputs.cols()) +
                       ", expected " + shape_string(batch.batch_size, spec.d_model));
    }
    if (batch.targets.rows() != batch.batch_size || batch.targets.cols() != spec.d_model) {
      throw ShapeError("forward: mlp targets are " + shape_string(batch.targets.rows(), batch.targets.cols()) +
                       ", expected " + shape_string(batch.batch_size, spec.d_model));
    }
    return;
  }
  if (batch.seq_len < 1 || batch.seq_len > spec.seq_len) {
    throw ShapeError("forward: sequence length " + std::to_string(batch.seq_len) + " outside [1, " +
                     std::to_string(spec.seq_len) + "]");
  }
  const auto n = static_cast<size_t>(batch.rows());
  if (batch.tokens.size() != n || batch.labels.size() != n) {
    throw ShapeError("forward: expected " + std::to_string(n) + " tokens and labels, got " +
                     std::to_string(batch.tokens.size()) + " and " + std::to_string(batch.labels.size()));
  }
  for (size_t i = 0; i < n; ++i) {
    if (batch.tokens[i] < 0 || batch.tokens[i] >= spec.vocab || batch.labels[i] < 0 ||
        batch.labels[i] >= spec.vocab) {
      throw ShapeError("forward: token id out of vocabulary at position " + std::to_string(i));
    }
  }
}

void fnv_mix(std::uint64_t& h, const void* data, size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

// Word-at-a-time variant for parameter data.
void fnv_mix_words(std::uint64_t& h, const double* data, Index count) {
  for (Index i = 0; i < count; ++i) {
    std::uint64_t word;
    std::memcpy(&word, data + i, sizeof(word));
    h ^= word;
    h *= 1099511628211ull;
  }
}

void fnv_mix(std::uint64_t& h, const Matrix& m) {
  const Index dims[2] = {m.rows(), m.cols()};
  fnv_mix(h, dims, sizeof(dims));
  fnv_mix_words(h, m.data(), m.size());
}

// ---------------------------------------------------------------------------
// mlp-stack

ForwardTrace forward_mlp(const Model& model, const Batch& batch) {
  ForwardTrace t;
  t.rows = batch.batch_size;
  t.embed_input = batch.inputs;
  t.targets = batch.targets;
  Matrix h = batch.inputs * model.embedding.transpose();
  t.blocks.resize(model.blocks.size());
  for (size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& blk = model.blocks[l];
    BlockCache& c = t.blocks[l];
    c.input = h;
    rms_norm(h, blk.norm_gains[0], c.rms1, c.normed1);
    c.act = (c.normed1 * blk.weights[0].transpose()).array().tanh();
    h += c.act * blk.weights[1].transpose();
  }
  t.final_hidden = h;
  t.output = h * model.head.transpose();
  t.loss = (t.output - batch.targets).squaredNorm() / static_cast<double>(t.output.size());
  return t;
}

GradientSet backward_mlp(const Model& model, const ForwardTrace& t, const BackwardMask& mask, double scale,
                         Index lowest) {
  GradientSet g;
  g.blocks.resize(model.blocks.size());
  const Matrix dpred = (t.output - t.targets) * (2.0 * scale / static_cast<double>(t.output.size()));
  if (mask.head) g.head = dpred.transpose() * t.final_hidden;
  Matrix dh = dpred * model.head;
  for (Index l = model.spec.n_layers - 1; l >= lowest; --l) {
    const Block& blk = model.blocks[static_cast<size_t>(l)];
    const BlockCache& c = t.blocks[static_cast<size_t>(l)];
    auto& out = g.blocks[static_cast<size_t>(l)];
    out.resize(blk.weights.size());
    const bool train = mask.blocks[static_cast<size_t>(l)];
    if (train) out[1] = dh.transpose() * c.act;
    const Matrix dz = ((dh * blk.weights[1]).array() * (1.0 - c.act.array().square())).matrix();
    if (train) out[0] = dz.transpose() * c.normed1;
    dh += rms_norm_backward(dz * blk.weights[0], c.input, blk.norm_gains[0], c.rms1);
  }
  if (mask.embedding) g.embedding = dh.transpose() * t.embed_input;
  return g;
}

// ---------------------------------------------------------------------------
// tiny-transformer

ForwardTrace forward_transformer(const Model& model, const Batch& batch) {
  const ModelSpec& s = model.spec;
  const Index L = batch.seq_len;
  const Index dh = s.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardTrace t;
  t.rows = batch.rows();
  t.tokens = batch.tokens;
  t.labels = batch.labels;

  Matrix h(t.rows, s.d_model);
  for (Index i = 0; i < t.rows; ++i) {
    h.row(i) = model.embedding.row(batch.tokens[static_cast<size_t>(i)]);
    for (Index c = 0; c < s.d_model; ++c) h(i, c) += positional(i % L, c, s.d_model);
  }

  t.blocks.resize(model.blocks.size());
  for (size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& blk = model.blocks[l];
    BlockCache& c = t.blocks[l];
    c.input = h;
    rms_norm(h, blk.norm_gains[0], c.rms1, c.normed1);
    c.q = c.normed1 * blk.weights[0].transpose();
    c.k = c.normed1 * blk.weights[1].transpose();
    c.v = c.normed1 * blk.weights[2].transpose();
    c.attn = Matrix::Zero(t.rows, s.d_model);
    c.probs.resize(static_cast<size_t>(batch.batch_size * s.n_heads));
    for (Index b = 0; b < batch.batch_size; ++b) {
      for (Index hd = 0; hd < s.n_heads; ++hd) {
        Matrix scores = c.q.block(b * L, hd * dh, L, dh) * c.k.block(b * L, hd * dh, L, dh).transpose();
        scores *= att_scale;
        if (s.causal) {
          for (Index i = 0; i < L; ++i) {
            for (Index j = i + 1; j < L; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
          }
        }
        softmax_rows(scores);
        c.attn.block(b * L, hd * dh, L, dh) = scores * c.v.block(b * L, hd * dh, L, dh);
        c.probs[static_cast<size_t>(b * s.n_heads + hd)] = std::move(scores);
      }
    }
    c.mid = h + c.attn * blk.weights[3].transpose();
    rms_norm(c.mid, blk.norm_gains[1], c.rms2, c.normed2);
    c.pre_act = c.normed2 * blk.weights[4].transpose();
    c.act = c.pre_act.unaryExpr([](double x) { return gelu(x); });
    h = c.mid + c.act * blk.weights[5].transpose();
  }
  t.final_hidden = h;
  rms_norm(h, Vector::Ones(s.d_model), t.final_rms, t.final_normed);
  Matrix logits = t.final_normed * model.head.transpose();
  double total = 0.0;
  for (Index i = 0; i < t.rows; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, batch.labels[static_cast<size_t>(i)]);
  }
  t.loss = total / static_cast<double>(t.rows);
  softmax_rows(logits);
  t.output = std::move(logits);
  return t;
}

GradientSet backward_transformer(const Model& model, const ForwardTrace& t, const BackwardMask& mask,
                                 double scale, Index lowest) {
  const ModelSpec& s = model.spec;
  const Index L = t.seq_len;
  const Index dh = s.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  GradientSet g;
  g.blocks.resize(model.blocks.size());
  Matrix dlogits = t.output;
  for (Index i = 0; i < t.rows; ++i) dlogits(i, t.labels[static_cast<size_t>(i)]) -= 1.0;
  dlogits *= scale / static_cast<double>(t.rows);
  if (mask.head) g.head = dlogits.transpose() * t.final_normed;
  Matrix dh_res = rms_norm_backward(dlogits * model.head, t.final_hidden, Vector::Ones(s.d_model), t.final_rms);

  for (Index l = s.n_layers - 1; l >= lowest; --l) {
    const Block& blk = model.blocks[static_cast<size_t>(l)];
    const BlockCache& c = t.blocks[static_cast<size_t>(l)];
    const auto& W = blk.weights;
    auto& out = g.blocks[static_cast<size_t>(l)];
    out.resize(W.size());
    const bool train = mask.blocks[static_cast<size_t>(l)];

    // feed-forward sublayer
    if (train) out[5] = dh_res.transpose() * c.act;
    const Matrix dpre =
        ((dh_res * W[5]).array() * c.pre_act.unaryExpr([](double x) { return gelu_grad(x); }).array()).matrix();
    if (train) out[4] = dpre.transpose() * c.normed2;
    Matrix dmid = dh_res + rms_norm_backward(dpre * W[4], c.mid, blk.norm_gains[1], c.rms2);

    // attention sublayer
    if (train) out[3] = dmid.transpose() * c.attn;
    const Matrix dattn = dmid * W[3];
    Matrix dq = Matrix::Zero(t.rows, s.d_model);
    Matrix dk = Matrix::Zero(t.rows, s.d_model);
    Matrix dv = Matrix::Zero(t.rows, s.d_model);
    for (Index b = 0; b < t.batch_size; ++b) {
      for (Index hd = 0; hd < s.n_heads; ++hd) {
        const Matrix& P = c.probs[static_cast<size_t>(b * s.n_heads + hd)];
        const auto dO = dattn.block(b * L, hd * dh, L, dh);
        const Matrix dP = dO * c.v.block(b * L, hd * dh, L, dh).transpose();
        dv.block(b * L, hd * dh, L, dh) = P.transpose() * dO;
        const Eigen::VectorXd row_dot = (dP.array() * P.array()).rowwise().sum();
        const Matrix dS = (P.array() * (dP.colwise() - row_dot).array()).matrix() * att_scale;
        dq.block(b * L, hd * dh, L, dh) = dS * c.k.block(b * L, hd * dh, L, dh);
        dk.block(b * L, hd * dh, L, dh) = dS.transpose() * c.q.block(b * L, hd * dh, L, dh);
      }
    }
    if (train) {
      out[0] = dq.transpose() * c.normed1;
      out[1] = dk.transpose() * c.normed1;
      out[2] = dv.transpose() * c.normed1;
    }
    const Matrix dn1 = dq * W[0] + dk * W[1] + dv * W[2];
    dh_res = dmid + rms_norm_backward(dn1, c.input, blk.norm_gains[0], c.rms1);
  }
  if (mask.embedding) {
    Matrix dE = Matrix::Zero(model.embedding.rows(), model.embedding.cols());
    for (Index i = 0; i < t.rows; ++i) dE.row(t.tokens[static_cast<size_t>(i)]) += dh_res.row(i);
    g.embedding = std::move(dE);
  }
  return g;
}

}  // namespace

std::string_view arch_name(Arch arch) {
  return arch == Arch::kMlpStack ? "mlp-stack" : "tiny-transformer";
}

Arch parse_arch(std::string_view tag) {
  if (tag == "mlp-stack") return Arch::kMlpStack;
  if (tag == "tiny-transformer") return Arch::kTinyTransformer;
  throw ConfigError("unknown arch '" + std::string(tag) + "' (expected mlp-stack or tiny-transformer)");
}

void ModelSpec::validate() const {
  if (n_layers < 1) throw ConfigError("model.n_layers must be >= 1");
  if (d_model < 1) throw ConfigError("model.d_model must be >= 1");
  if (d_hidden < 1) throw ConfigError("model.d_hidden must be >= 1");
  if (arch == Arch::kTinyTransformer) {
    if (n_heads < 1) throw ConfigError("model.n_heads must be >= 1");
    if (d_model % n_heads != 0) {
      throw ConfigError("model.d_model (" + std::to_string(d_model) + ") must be divisible by model.n_heads (" +
                        std::to_string(n_heads) + ")");
    }
    if (vocab < 2) throw ConfigError("model.vocab must be >= 2");
    if (seq_len < 1) throw ConfigError("model.seq_len must be >= 1");
  }
}

nlohmann::json ModelSpec::to_json() const {
  return {{"arch", arch_name(arch)}, {"n_layers", n_layers}, {"d_model", d_model},
          {"d_hidden", d_hidden},    {"n_heads", n_heads},   {"vocab", vocab},
          {"seq_len", seq_len},      {"causal", causal}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
  ModelSpec s;
  for (const auto& [key, value] : j.items()) {
    auto as_count = [&](Index& field) {
      if (!value.is_number_integer()) throw ConfigError("model." + key + " must be an integer");
      field = value.get<Index>();
    };
    if (key == "arch") {
      if (!value.is_string()) throw ConfigError("model.arch must be a string");
      s.arch = parse_arch(value.get<std::string>());
    } else if (key == "n_layers") {
      as_count(s.n_layers);
    } else if (key == "d_model") {
      as_count(s.d_model);
    } else if (key == "d_hidden") {
      as_count(s.d_hidden);
    } else if (key == "n_heads") {
      as_count(s.n_heads);
    } else if (key == "vocab") {
      as_count(s.vocab);
    } else if (key == "seq_len") {
      as_count(s.seq_len);
    } else if (key == "causal") {
      if (!value.is_boolean()) throw ConfigError("model.causal must be a boolean");
      s.causal = value.get<bool>();
    } else {
      throw ConfigError("model." + key + ": unknown key");
    }
  }
  s.validate();
  return s;
}

std::span<const std::string_view> block_matrix_names(Arch arch) {
  if (arch == Arch::kMlpStack) return kMlpNames;
  return kTransformerNames;
}

std::vector<std::pair<Index, Index>> block_matrix_shapes(const ModelSpec& spec) {
  const Index d = spec.d_model;
  const Index f = spec.d_hidden;
  if (spec.arch == Arch::kMlpStack) return {{f, d}, {d, f}};
  return {{d, d}, {d, d}, {d, d}, {d, d}, {f, d}, {d, f}};
}

Index block_norm_count(Arch arch) { return arch == Arch::kMlpStack ? 1 : 2; }

Index Model::block_parameter_count() const {
  Index n = 0;
  for (const auto& [r, c] : block_matrix_shapes(spec)) n += r * c;
  return n;
}

Index Model::trainable_parameter_count() const {
  return embedding.size() + head.size() + spec.n_layers * block_parameter_count();
}

Index Model::stored_element_count() const {
  return trainable_parameter_count() + spec.n_layers * block_norm_count(spec.arch) * spec.d_model;
}

const Matrix& BlockCache::matrix_input(Arch arch, Index k) const {
  if (arch == Arch::kMlpStack) {
    switch (k) {
      case 0: return normed1;
      case 1: return act;
      default: break;
    }
  } else {
    switch (k) {
      case 0:
      case 1:
      case 2: return normed1;
      case 3: return attn;
      case 4: return normed2;
      case 5: return act;
      default: break;
    }
  }
  throw ShapeError("matrix_input: block matrix index " + std::to_string(k) + " out of range");
}

const Matrix& ForwardTrace::block_input(Index l) const {
  if (l < 0 || l > static_cast<Index>(blocks.size())) {
    throw ShapeError("block_input: layer " + std::to_string(l) + " out of range");
  }
  return l == static_cast<Index>(blocks.size()) ? final_hidden : blocks[static_cast<size_t>(l)].input;
}

Index ForwardTrace::activation_element_count() const {
  Index n = embed_input.size() + final_hidden.size() + final_rms.size() + final_normed.size() + output.size();
  for (const auto& c : blocks) {
    n += c.input.size() + c.rms1.size() + c.normed1.size() + c.q.size() + c.k.size() + c.v.size() +
         c.attn.size() + c.mid.size() + c.rms2.size() + c.normed2.size() + c.pre_act.size() + c.act.size();
    for (const auto& p : c.probs) n += p.size();
  }
  return n;
}

BackwardMask BackwardMask::all(Index n_layers) {
  BackwardMask m;
  m.blocks.assign(static_cast<size_t>(n_layers), true);
  return m;
}

Index GradientSet::element_count() const {
  Index n = (embedding ? embedding->size() : 0) + (head ? head->size() : 0);
  for (const auto& blk : blocks) {
    for (const auto& m : blk) n += m ? m->size() : 0;
  }
  return n;
}

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model model;
  model.spec = spec;
  std::uint64_t stream = 0;
  auto draw = [&](Index rows, Index cols) {
    Rng rng(seed, stream++);
    return rng.normal_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  };
  const Index io = spec.arch == Arch::kMlpStack ? spec.d_model : spec.vocab;
  model.embedding = draw(io, spec.d_model);
  model.blocks.resize(static_cast<size_t>(spec.n_layers));
  for (auto& blk : model.blocks) {
    for (const auto& [r, c] : block_matrix_shapes(spec)) blk.weights.push_back(draw(r, c));
    blk.norm_gains.assign(static_cast<size_t>(block_norm_count(spec.arch)), Vector::Ones(spec.d_model));
  }
  model.head = draw(io, spec.d_model);
  return model;
}

std::uint64_t fingerprint(const Model& model) {
  std::uint64_t h = 1469598103934665603ull;
  const auto spec_text = model.spec.to_json().dump();
  fnv_mix(h, spec_text.data(), spec_text.size());
  fnv_mix(h, model.embedding);
  for (const auto& blk : model.blocks) {
    for (const auto& w : blk.weights) fnv_mix(h, w);
    for (const auto& g : blk.norm_gains) fnv_mix_words(h, g.data(), g.size());
  }
  fnv_mix(h, model.head);
  return h;
}

ForwardTrace forward(const Model& model, const Batch& batch) {
  check_batch(model.spec, batch);
  ForwardTrace t = model.spec.arch == Arch::kMlpStack ? forward_mlp(model, batch)
                                                      : forward_transformer(model, batch);
  t.arch = model.spec.arch;
  t.batch_size = batch.batch_size;
  t.seq_len = model.spec.arch == Arch::kMlpStack ? 1 : batch.seq_len;
  t.model_fingerprint = fingerprint(model);
  return t;
}

GradientSet backward(const Model& model, const ForwardTrace& trace, const BackwardMask& mask, double loss_scale) {
  if (trace.model_fingerprint != fingerprint(model) || trace.arch != model.spec.arch) {
    throw StateError("backward: trace is stale (model parameters changed since forward)");
  }
  BackwardMask m = mask;
  if (m.blocks.empty()) m.blocks.assign(static_cast<size_t>(model.spec.n_layers), true);
  if (static_cast<Index>(m.blocks.size()) != model.spec.n_layers) {
    throw ShapeError("backward: mask covers " + std::to_string(m.blocks.size()) + " blocks, model has " +
                     std::to_string(model.spec.n_layers));
  }
  // Propagation can stop at the lowest unit that still wants a weight gradient.
  Index lowest = model.spec.n_layers;
  if (m.embedding) {
    lowest = 0;
  } else {
    for (Index l = 0; l < model.spec.n_layers; ++l) {
      if (m.blocks[static_cast<size_t>(l)]) {
        lowest = l;
        break;
      }
    }
  }
  GradientSet g = model.spec.arch == Arch::kMlpStack ? backward_mlp(model, trace, m, loss_scale, lowest)
                                                     : backward_transformer(model, trace, m, loss_scale, lowest);
  for (size_t l = 0; l < g.blocks.size(); ++l) {
    if (!m.blocks[l]) g.blocks[l].clear();
  }
  return g;
}

void save_checkpoint(const Model& model, const std::filesystem::path& manifest) {
  std::vector<NamedTensor> tensors;
  tensors.push_back({"embedding", model.embedding});
  const auto names = block_matrix_names(model.spec.arch);
  for (size_t l = 0; l < model.blocks.size(); ++l) {
    const auto prefix = "blocks." + std::to_string(l) + ".";
    for (size_t k = 0; k < names.size(); ++k) {
      tensors.push_back({prefix + std::string(names[k]), model.blocks[l].weights[k]});
    }
    for (size_t k = 0; k < model.blocks[l].norm_gains.size(); ++k) {
      tensors.push_back({prefix + "norm" + std::to_string(k), model.blocks[l].norm_gains[k].transpose()});
    }
  }
  tensors.push_back({"head", model.head});
  const nlohmann::json meta = {{"format", "ows-checkpoint"},
                               {"arch", arch_name(model.spec.arch)},
                               {"spec", model.spec.to_json()}};
  write_archive(manifest, meta, tensors);
}

Model load_checkpoint(const std::filesystem::path& manifest) {
  if (!std::filesystem::exists(manifest)) throw FileError("checkpoint not found: " + manifest.string());
  const TensorArchive archive = read_archive(manifest);
  if (!archive.meta.contains("arch") || !archive.meta["arch"].is_string()) {
    throw FormatError("manifest field 'arch' missing or not a string");
  }
  const Arch arch = parse_arch(archive.meta["arch"].get<std::string>());
  if (!archive.meta.contains("spec")) throw FormatError("manifest field 'spec' missing");
  Model model;
  model.spec = ModelSpec::from_json(archive.meta["spec"]);
  if (model.spec.arch != arch) throw FormatError("manifest field 'arch' disagrees with 'spec.arch'");

  auto take = [&](const std::string& name, Index rows, Index cols) {
    const Matrix& m = archive.at(name);
    if (m.rows() != rows || m.cols() != cols) {
      throw FormatError("tensor '" + name + "' is " + shape_string(m.rows(), m.cols()) + ", spec requires " +
                        shape_string(rows, cols));
    }
    return m;
  };
  const Index io = arch == Arch::kMlpStack ? model.spec.d_model : model.spec.vocab;
  model.embedding = take("embedding", io, model.spec.d_model);
  const auto names = block_matrix_names(arch);
  const auto shapes = block_matrix_shapes(model.spec);
  model.blocks.resize(static_cast<size_t>(model.spec.n_layers));
  for (size_t l = 0; l < model.blocks.size(); ++l) {
    const auto prefix = "blocks." + std::to_string(l) + ".";
    for (size_t k = 0; k < names.size(); ++k) {
      model.blocks[l].weights.push_back(take(prefix + std::string(names[k]), shapes[k].first, shapes[k].second));
    }
    for (Index k = 0; k < block_norm_count(arch); ++k) {
      model.blocks[l].norm_gains.push_back(take(prefix + "norm" + std::to_string(k), 1, model.spec.d_model).transpose());
    }
  }
  model.head = take("head", io, model.spec.d_model);
  const Index expected = 2 + model.spec.n_layers * static_cast<Index>(names.size() + block_norm_count(arch));
  if (static_cast<Index>(archive.tensors.size()) != expected) {
    throw FormatError("manifest 'tensors' lists " + std::to_string(archive.tensors.size()) + " entries, expected " +
                      std::to_string(expected));
  }
  return model;
}

}  // namespace ows
