#ifndef OWS_OUTLIER_HPP
#define OWS_OUTLIER_HPP

#include <span>
#include <vector>

#include <json.hpp>

#include "ows/linalg.hpp"
#include "ows/model.hpp"

namespace ows {

inline constexpr double kDefaultTau = 13.0;
inline constexpr Index kDefaultCalibrationBatches = 4;

/// Streaming per-feature input norms ||X_j||_2 for every block matrix, where X
/// stacks the (batch * sequence) rows of every calibration batch.
struct CalibrationStats {
  std::vector<std::vector<Vector>> sum_squares;  // [block][matrix] -> C_in entries
  Index batches = 0;
  Index rows = 0;

  void accumulate(const ForwardTrace& trace);
  Vector norms(Index block, Index matrix) const;
};

CalibrationStats calibrate(const Model& model, std::span<const Batch> batches);

/// A_ij = norms_j * |W_ij|.
Matrix outlier_scores(const Matrix& w, const Vector& norms);

struct LayerOutlierRatio {
  double ratio = 0.0;
  Index outliers = 0;  // entries with A_ij > tau * mean(A)
  Index total = 0;
};

/// Outlier fraction of one layer, pooling every score matrix into a single
/// population with one shared mean.
LayerOutlierRatio layer_outlier_ratio(std::span<const Matrix> scores, double tau);

struct OutlierProfile {
  double tau = kDefaultTau;
  std::vector<double> d;                        // one ratio per block
  std::vector<std::pair<Index, Index>> counts;  // (outliers, total) per block

  nlohmann::json to_json() const;
  static OutlierProfile from_json(const nlohmann::json& j);
};

OutlierProfile build_profile(const Model& model, const CalibrationStats& stats, double tau = kDefaultTau);

}  // namespace ows

#endif  // OWS_OUTLIER_HPP
