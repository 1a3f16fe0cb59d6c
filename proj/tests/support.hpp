#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "treewave/experiment.hpp"
#include "treewave/graph.hpp"

namespace treewave::test {

inline constexpr double kPi = std::numbers::pi;

struct EdgeSpec {
  double length, k1, k2, theta;
};

/// Chain root(0) -> 1 -> ... with the given edges.
inline MetricTree chain(const std::vector<EdgeSpec>& specs) {
  TreeDescription d;
  d.root = 0;
  d.vertices.push_back(0);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const VertexId head = static_cast<VertexId>(i + 1);
    d.vertices.push_back(head);
    d.edges.push_back({static_cast<EdgeId>(i), head - 1, head, specs[i].length, specs[i].k1, specs[i].k2,
                       specs[i].theta});
  }
  return build_tree(d);
}

/// Root edge 0 -> 1, then one edge from vertex 1 per leaf spec.
inline MetricTree star(const EdgeSpec& root_edge, const std::vector<EdgeSpec>& leaves) {
  TreeDescription d;
  d.root = 0;
  d.vertices = {0, 1};
  d.edges.push_back({0, 0, 1, root_edge.length, root_edge.k1, root_edge.k2, root_edge.theta});
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const VertexId v = static_cast<VertexId>(i + 2);
    d.vertices.push_back(v);
    d.edges.push_back({static_cast<EdgeId>(i + 1), 1, v, leaves[i].length, leaves[i].k1, leaves[i].k2,
                       leaves[i].theta});
  }
  return build_tree(d);
}

inline MetricTree random_tree(std::uint64_t seed, int edges = 8, int depth = 4) {
  ExperimentConfig c;
  c.seed = seed;
  c.edges = edges;
  c.depth = depth;
  return generate_tree(c);
}

inline double max_abs(const Mat2& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace treewave::test
