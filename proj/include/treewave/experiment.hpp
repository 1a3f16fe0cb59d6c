#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treewave/graph.hpp"

namespace treewave {

enum class TreeShape { Random, TwoEdge, Star };

struct ExperimentConfig {
  std::uint64_t seed = 1;
  TreeShape shape = TreeShape::Random;
  int edges = 12;         // total edge count, root edge included
  int depth = 4;          // max edges on a root-to-leaf path
  int max_children = 3;   // per internal vertex
  double length_min = 0.6, length_max = 1.4;
  double speed_min = 1.0, speed_max = 2.0;       // channel-1 speed range
  double ratio_min = 0.45, ratio_max = 0.85;     // k2 / k1
  double min_speed_separation = 0.05;            // relative gap between k1 and k2
  bool forbid_isotropic = true;
  double min_angle_separation = 0.35;            // between edges at one vertex, radians
  double horizon_factor = 2.5;                   // horizon = factor * d(Omega)
  double exact_factor = 1.25;                    // spikes exact up to factor * d(Omega), lumped after
  int s_count = 64;
  double s_min = 0.0, s_max = 0.0;               // 0: derived from the tree
};

/// Seeded random tree obeying the genericity controls. Vertex 0 is the root.
MetricTree generate_tree(const ExperimentConfig& config);

struct EdgeComparison {
  std::string key;  // sorted boundary labels below the edge, "/", edge count of its subtree
  EdgeId truth_id = 0, recovered_id = 0;
  double length_error = 0.0, k1_error = 0.0, k2_error = 0.0;  // relative
};

struct AngleComparison {
  std::string vertex;  // key of the vertex's parent edge
  std::string edge_i, edge_j;
  double error_mod_pi = 0.0;
  double error_mod_2pi = 0.0;
  bool resolved = false;  // both directions claimed mod 2pi
};

struct Comparison {
  bool topology_match = false;
  std::string diff;
  std::vector<EdgeComparison> edges;
  std::vector<AngleComparison> angles;
  double max_length_error = 0.0, max_speed_error = 0.0;
  double max_angle_error_pi = 0.0, max_angle_error_2pi = 0.0;
};

/// Matches edges by the set of non-root boundary labels they separate from the
/// root; `resolved_edges` lists recovered edge ids whose direction is known
/// mod 2pi relative to their resolved neighbours.
Comparison compare_trees(const MetricTree& truth, const MetricTree& recovered,
                         const std::vector<EdgeId>& resolved_edges = {});

std::string comparison_csv(const Comparison& c);

}  // namespace treewave
