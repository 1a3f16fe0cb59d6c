#pragma once

// Exact event-driven propagation of delta wavefronts on a MetricTree.
//
// A front is a scalar delta travelling on one channel of one edge. When it
// reaches an internal vertex of degree K it is converted into a vertex
// displacement and re-split into at most 2K children (two channels on every
// incident edge, including the reflection). Without pruning the number of
// live fronts grows like (2K-1)^n after n scatterings; two mechanisms keep it
// bounded:
//   * fronts whose amplitude drops below `prune_eps`, or whose arrival lies
//     beyond the horizon, are discarded;
//   * fronts on the same edge, channel and direction arriving within
//     `merge_tol` of each other are summed before scattering, which collapses
//     the many paths that visit the same edges in a different order.
// Worst case the work is still exponential in horizon / min_edge_time.

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

#include "treewave/graph.hpp"

namespace treewave {

struct Spike {
  int order = 1;  // 0: delta, 1: delta'
  double time = 0.0;
  double coeff = 0.0;
};

using SpikeTrain = std::vector<Spike>;

/// 2x2 block of spike trains, entries[src_channel][rcv_channel].
struct ResponseBlock {
  std::array<std::array<SpikeTrain, 2>, 2> entries;
};

/// Time-domain Dirichlet-to-Neumann response for delta inputs.
/// blocks[i][j] is R_ij: source boundary[i], receiver boundary[j].
struct ResponseMatrix {
  double horizon = 0.0;
  double exact_horizon = 0.0;  // spikes after this time are lumped
  std::vector<VertexId> boundary;
  std::vector<std::vector<ResponseBlock>> blocks;

  std::size_t size() const { return boundary.size(); }
};

/// Scattering data for one vertex. out[i][j] maps an incoming displacement
/// vector on incident edge i (frame pointing away from the vertex) to the
/// outgoing vector on incident edge j in its away frame; out[i][i] is the
/// reflection.
struct VertexScatter {
  std::vector<std::size_t> edges;
  std::vector<std::vector<Mat2>> out;
};

struct ScatterTable {
  std::vector<VertexScatter> vertices;  // indexed by vertex
};

ScatterTable precompute_scatter(const MetricTree& tree);

/// Largest relative energy-flux defect k_in - sum k_out * amp^2 over every
/// vertex, incoming edge and channel of the table.
double energy_flux_defect(const MetricTree& tree, const ScatterTable& table);

struct SimulationOptions {
  double horizon = 0.0;
  double prune_eps = 1e-14;
  double merge_tol = 1e-12;
  // Fronts reaching the root are recorded as exits and not reflected, which
  // makes the root edge a transparent (semi-infinite) termination.
  bool absorbing_root = false;
  // Spikes are exact up to exact_horizon (0: the whole horizon). Later fronts
  // on one edge, channel and direction are lumped into bins of lump_width,
  // bounding the work in the long tail at the cost of O(lump_width) timing.
  double exact_horizon = 0.0;
  double lump_width = 0.0;  // 0: horizon / 4000
  // A row stays exact past exact_horizon until this many fronts have been
  // scattered (0: never), so small trees are simulated exactly throughout.
  std::size_t exact_budget = 50000;

  double exact_until() const { return exact_horizon > 0.0 ? std::min(exact_horizon, horizon) : horizon; }
  double lump() const { return lump_width > 0.0 ? lump_width : horizon / 4000.0; }
};

/// A front leaving through the absorbing root: arrival time, channel and
/// amplitude in the root edge frame pointing away from the root.
struct Exit {
  double time = 0.0;
  int channel = 0;
  double amplitude = 0.0;
};

/// One source row: receivers[j][rcv_channel] for every boundary vertex j in
/// tree.boundary() order.
struct ResponseRow {
  std::vector<std::array<SpikeTrain, 2>> receivers;
  bool short_horizon = false;  // horizon < 2 * optical diameter
  std::size_t fronts_processed = 0;
  std::vector<Exit> exits;  // only with absorbing_root
  double exact_until = 0.0;  // spikes after this time are lumped
};

ResponseRow simulate_source(const MetricTree& tree, const ScatterTable& table, std::size_t source_vertex,
                            int channel, const SimulationOptions& options);
ResponseRow simulate_source(const MetricTree& tree, std::size_t source_vertex, int channel,
                            const SimulationOptions& options);

/// Runs every (boundary vertex, channel) source. The root is excluded unless
/// `include_root` is set, matching the measurement setup.
ResponseMatrix full_response(const MetricTree& tree, const SimulationOptions& options, bool include_root = false,
                             bool* short_horizon = nullptr);

/// Coalesces spikes of equal order within `time_tol` (times weighted by |coeff|,
/// coefficients summed), drops cancelled groups, and sorts by time.
SpikeTrain merge_spikes(const SpikeTrain& train, double time_tol);
/// As above, with `late_tol` for groups starting after `late_from`.
SpikeTrain merge_spikes(const SpikeTrain& train, double time_tol, double late_from, double late_tol);

/// sum of coeff * e^{-s t} (order 0) and coeff * s * e^{-s t} (order 1).
double laplace_of_spikes(const SpikeTrain& train, double s);

/// Earliest spike with |coeff| above `threshold`, or nullptr.
const Spike* first_spike(const SpikeTrain& train, double threshold = 0.0);

}  // namespace treewave
