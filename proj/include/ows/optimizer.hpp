#ifndef OWS_OPTIMIZER_HPP
#define OWS_OPTIMIZER_HPP

#include <optional>

#include "ows/linalg.hpp"

namespace ows {

inline constexpr Index kDefaultRefreshEvery = 200;

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Diagnostic plain-SGD mode: no moments are kept and the update is -lr * g.
  bool moment_free = false;
};

struct AdamState {
  AdamConfig config;
  Matrix m;  // empty in moment-free mode
  Matrix v;
  Index step = 0;

  static AdamState zeros(Index rows, Index cols, const AdamConfig& config);
  Index element_count() const { return m.size() + v.size(); }
};

/// Bias-corrected Adam. Returns the additive update -lr * m_hat / (sqrt(v_hat) + eps).
Matrix adam_step(AdamState& state, const Matrix& g);

enum class ProjectionSide {
  kLeft,   // basis = U_r (rows x r); low-rank form P^T G is r x cols
  kRight,  // basis = V_r (cols x r); low-rank form G P is rows x r
};

struct Projector {
  Matrix basis;
  ProjectionSide side = ProjectionSide::kLeft;
};

/// SVD projector on the smaller side of g: left factors when rows <= cols.
Projector compute_projector(const Matrix& g, Index rank);

/// Gradient-projected Adam state for one parameter matrix. Adam moments live in
/// the r-dimensional subspace and survive projector refreshes.
struct LowRankOptState {
  Index rows = 0;
  Index cols = 0;
  Index rank = 0;
  Index refresh_every = kDefaultRefreshEvery;
  Index active_steps = 0;
  std::optional<Projector> projector;
  AdamState adam;

  static LowRankOptState create(Index rows, Index cols, Index rank, Index refresh_every,
                                const AdamConfig& config);

  ProjectionSide side() const { return rows <= cols ? ProjectionSide::kLeft : ProjectionSide::kRight; }
  Index projected_rows() const { return side() == ProjectionSide::kLeft ? rank : rows; }
  Index projected_cols() const { return side() == ProjectionSide::kLeft ? cols : rank; }
  Index element_count() const;
};

Matrix project(const Matrix& g, const LowRankOptState& state);
Matrix project_back(const Matrix& low_rank, const LowRankOptState& state);

/// Refresh the projector when active_steps % refresh_every == 0, then
/// project -> adam_step -> project_back. Returns the full-shape update.
Matrix low_rank_step(LowRankOptState& state, const Matrix& g);

}  // namespace ows

#endif  // OWS_OPTIMIZER_HPP
