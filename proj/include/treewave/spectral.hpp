#pragma once

#include <cstddef>
#include <vector>

#include "treewave/graph.hpp"

namespace treewave {

/// Titchmarsh-Weyl matrix at lambda = -s^2 over the non-root boundary.
/// blocks[i][j](r, c): outward derivative on channel c at boundary[j] for a unit
/// Dirichlet value on channel r at boundary[i]. Channels are expressed in the
/// boundary edge's frame pointing away from the boundary vertex.
struct TWSample {
  double s = 0.0;
  std::vector<VertexId> boundary;
  std::vector<std::vector<Mat2>> blocks;
  double rcond = 1.0;  // reciprocal condition estimate of the assembled system

  std::size_t size() const { return boundary.size(); }
};

/// Assembled and factorized 4N x 4N system of the vertex conditions at one s.
/// Unknowns per edge and channel are the coefficients of
/// e^{-s x/k} and e^{-s (l-x)/k}, which stay O(1) for large s.
class SpectralSystem {
 public:
  SpectralSystem(const MetricTree& tree, double s);

  double s() const { return s_; }
  double rcond() const { return rcond_; }
  std::size_t equation_count() const { return size_; }

  /// Outward derivatives at every boundary vertex (boundary() order) for the
  /// given Dirichlet values, both in away-pointing edge frames.
  std::vector<Vec2> dirichlet_to_neumann(const std::vector<Vec2>& boundary_values) const;

 private:
  const MetricTree* tree_;
  double s_;
  std::size_t size_;
  double rcond_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  std::vector<std::size_t> boundary_rows_;  // first Dirichlet row of each boundary vertex
};

/// Derivatives at every non-root boundary vertex for a unit value on
/// `channel` at `excited` (a non-root boundary vertex index).
std::vector<Vec2> tw_column(const MetricTree& tree, double s, std::size_t excited, int channel);

TWSample tw_matrix(const MetricTree& tree, double s);

/// Independent tw_matrix evaluations; `threads` > 1 splits the grid across
/// worker threads without changing the result.
std::vector<TWSample> tw_samples(const MetricTree& tree, const std::vector<double>& s_grid, unsigned threads = 1);

/// -(s/k) coth(s l / k): TW function of one clamped edge.
double single_edge_tw(double k, double l, double s);

struct SGridSpec {
  double min = 0.0;
  double max = 0.0;
  int count = 64;
  bool logarithmic = true;
};

/// Log-spaced grid from 2/d(Omega) up to 30 / (shortest one-way edge time).
SGridSpec default_s_grid(const MetricTree& tree, int count = 64);
std::vector<double> make_s_grid(const SGridSpec& spec);

}  // namespace treewave
