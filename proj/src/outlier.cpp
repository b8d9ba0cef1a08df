#include "ows/outlier.hpp"

#include <cmath>
#include <string>

#include "ows/error.hpp"

namespace ows {

void CalibrationStats::accumulate(const ForwardTrace& trace) {
  const auto n_blocks = trace.blocks.size();
  if (sum_squares.empty()) sum_squares.resize(n_blocks);
  if (sum_squares.size() != n_blocks) {
    throw ShapeError("calibrate: trace has " + std::to_string(n_blocks) + " blocks, stats have " +
                     std::to_string(sum_squares.size()));
  }
  const Index per_block = static_cast<Index>(block_matrix_names(trace.arch).size());
  for (size_t l = 0; l < n_blocks; ++l) {
    auto& mats = sum_squares[l];
    if (mats.empty()) mats.resize(static_cast<size_t>(per_block));
    for (Index k = 0; k < per_block; ++k) {
      const Matrix& x = trace.blocks[l].matrix_input(trace.arch, k);
      Vector& acc = mats[static_cast<size_t>(k)];
      if (acc.size() == 0) acc = Vector::Zero(x.cols());
      acc += x.colwise().squaredNorm().transpose();
    }
  }
  ++batches;
  rows += trace.rows;
}

Vector CalibrationStats::norms(Index block, Index matrix) const {
  if (block < 0 || block >= static_cast<Index>(sum_squares.size()) || matrix < 0 ||
      matrix >= static_cast<Index>(sum_squares[static_cast<size_t>(block)].size())) {
    throw StateError("calibration stats missing for block " + std::to_string(block) + " matrix " +
                     std::to_string(matrix));
  }
  return sum_squares[static_cast<size_t>(block)][static_cast<size_t>(matrix)].cwiseSqrt();
}

CalibrationStats calibrate(const Model& model, std::span<const Batch> batches) {
  if (batches.empty()) throw ConfigError("calibrate: at least one calibration batch is required");
  CalibrationStats stats;
  for (const Batch& b : batches) stats.accumulate(forward(model, b));
  return stats;
}

Matrix outlier_scores(const Matrix& w, const Vector& norms) {
  if (norms.size() != w.cols()) {
    throw ShapeError("outlier_scores: " + std::to_string(norms.size()) + " norms for a matrix with " +
                     std::to_string(w.cols()) + " input features");
  }
  return (w.cwiseAbs().array().rowwise() * norms.transpose().array()).matrix();
}

LayerOutlierRatio layer_outlier_ratio(std::span<const Matrix> scores, double tau) {
  if (!(tau > 0.0)) throw ConfigError("layer_outlier_ratio: tau must be > 0");
  LayerOutlierRatio out;
  double sum = 0.0;
  for (const Matrix& a : scores) {
    out.total += a.size();
    sum += a.sum();
  }
  if (out.total == 0) throw ConfigError("layer_outlier_ratio: layer has no weights");
  const double threshold = tau * (sum / static_cast<double>(out.total));
  for (const Matrix& a : scores) out.outliers += (a.array() > threshold).count();
  out.ratio = static_cast<double>(out.outliers) / static_cast<double>(out.total);
  return out;
}

nlohmann::json OutlierProfile::to_json() const {
  nlohmann::json c = nlohmann::json::array();
  for (const auto& [num, den] : counts) c.push_back({num, den});
  return {{"tau", tau}, {"d", d}, {"counts", c}};
}

OutlierProfile OutlierProfile::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("tau") || !j.contains("d")) {
    throw FormatError("profile JSON requires 'tau' and 'd'");
  }
  OutlierProfile p;
  try {
    p.tau = j.at("tau").get<double>();
    p.d = j.at("d").get<std::vector<double>>();
    if (j.contains("counts")) {
      for (const auto& c : j.at("counts")) p.counts.emplace_back(c.at(0).get<Index>(), c.at(1).get<Index>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("profile JSON malformed: ") + e.what());
  }
  for (double v : p.d) {
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("profile field 'd' entries must lie in [0, 1]");
  }
  return p;
}

OutlierProfile build_profile(const Model& model, const CalibrationStats& stats, double tau) {
  OutlierProfile profile;
  profile.tau = tau;
  const auto names = block_matrix_names(model.spec.arch);
  for (Index l = 0; l < model.spec.n_layers; ++l) {
    const Block& blk = model.blocks[static_cast<size_t>(l)];
    std::vector<Matrix> scores;
    scores.reserve(blk.weights.size());
    for (Index k = 0; k < static_cast<Index>(blk.weights.size()); ++k) {
      const auto lk = static_cast<size_t>(l);
      const auto kk = static_cast<size_t>(k);
      if (lk >= stats.sum_squares.size() || kk >= stats.sum_squares[lk].size() ||
          stats.sum_squares[lk][kk].size() == 0) {
        throw StateError("calibration stats missing for blocks." + std::to_string(l) + "." + std::string(names[kk]));
      }
      scores.push_back(outlier_scores(blk.weights[kk], stats.norms(l, k)));
    }
    const auto r = layer_outlier_ratio(scores, tau);
    profile.d.push_back(r.ratio);
    profile.counts.emplace_back(r.outliers, r.total);
  }
  return profile;
}

}  // namespace ows
