#include "ows/optimizer.hpp"

#include <cmath>
#include <string>

#include "ows/error.hpp"

namespace ows {

AdamState AdamState::zeros(Index rows, Index cols, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  if (!config.moment_free) {
    s.m = Matrix::Zero(rows, cols);
    s.v = Matrix::Zero(rows, cols);
  }
  return s;
}

Matrix adam_step(AdamState& state, const Matrix& g) {
  const AdamConfig& c = state.config;
  if (c.moment_free) {
    ++state.step;
    return -c.lr * g;
  }
  if (g.rows() != state.m.rows() || g.cols() != state.m.cols()) {
    throw ShapeError("adam_step: gradient " + shape_string(g.rows(), g.cols()) + " vs state " +
                     shape_string(state.m.rows(), state.m.cols()));
  }
  ++state.step;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * g;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * g.cwiseProduct(g);
  const double t = static_cast<double>(state.step);
  const double m_corr = 1.0 - std::pow(c.beta1, t);
  const double v_corr = 1.0 - std::pow(c.beta2, t);
  return (-c.lr * (state.m.array() / m_corr) / ((state.v.array() / v_corr).sqrt() + c.eps)).matrix();
}

Projector compute_projector(const Matrix& g, Index rank) {
  const auto svd = truncated_svd(g, rank);
  if (g.rows() <= g.cols()) return {svd.u, ProjectionSide::kLeft};
  return {svd.v, ProjectionSide::kRight};
}

LowRankOptState LowRankOptState::create(Index rows, Index cols, Index rank, Index refresh_every,
                                        const AdamConfig& config) {
  if (rank < 1 || rank > std::min(rows, cols)) {
    throw RankError("low-rank state: rank " + std::to_string(rank) + " invalid for " + shape_string(rows, cols));
  }
  if (refresh_every < 1) throw ConfigError("low-rank state: refresh_every must be >= 1");
  LowRankOptState s;
  s.rows = rows;
  s.cols = cols;
  s.rank = rank;
  s.refresh_every = refresh_every;
  s.adam = AdamState::zeros(s.projected_rows(), s.projected_cols(), config);
  return s;
}

Index LowRankOptState::element_count() const {
  return (projector ? projector->basis.size() : 0) + adam.element_count();
}

Matrix project(const Matrix& g, const LowRankOptState& state) {
  if (!state.projector) throw StateError("project: projector not initialized");
  if (g.rows() != state.rows || g.cols() != state.cols) {
    throw ShapeError("project: gradient " + shape_string(g.rows(), g.cols()) + " vs state " +
                     shape_string(state.rows, state.cols));
  }
  const Matrix& p = state.projector->basis;
  if (state.projector->side == ProjectionSide::kLeft) return p.transpose() * g;
  return g * p;
}

Matrix project_back(const Matrix& low_rank, const LowRankOptState& state) {
  if (!state.projector) throw StateError("project_back: projector not initialized");
  if (low_rank.rows() != state.projected_rows() || low_rank.cols() != state.projected_cols()) {
    throw ShapeError("project_back: low-rank input " + shape_string(low_rank.rows(), low_rank.cols()) +
                     ", expected " + shape_string(state.projected_rows(), state.projected_cols()));
  }
  const Matrix& p = state.projector->basis;
  if (state.projector->side == ProjectionSide::kLeft) return p * low_rank;
  return low_rank * p.transpose();
}

Matrix low_rank_step(LowRankOptState& state, const Matrix& g) {
  if (state.active_steps % state.refresh_every == 0) state.projector = compute_projector(g, state.rank);
  const Matrix update = project_back(adam_step(state.adam, project(g, state)), state);
  ++state.active_steps;
  return update;
}

}  // namespace ows
