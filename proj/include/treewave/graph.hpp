#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace treewave {

using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;

using VertexId = int;
using EdgeId = int;

/// Channel index on an edge: 0 is longitudinal (along e_i), 1 is transverse.
inline constexpr int kChannels = 2;

enum class Errc {
  CycleDetected,
  Disconnected,
  NonPositiveParameter,
  RootNotBoundary,
  NotIncident,
  ParseError,
  SchemaVersionMismatch,
  SingularVertexSystem,
  IllConditioned,
  MissingLeadingSpike,
  InconsistentArrivals,
  SpikeOverlap,
  NonTransitiveSiblingRelation,
  EmptyGrouping,
  DegenerateLeafData,
  EigenvalueMismatch,
  IsotropicAmbiguity,
  NegativeDiscriminant,
  SingularPeel,
  FrameMismatch,
  FitWindowTooSmall,
  ChannelLengthMismatch,
  BelowNoiseFloor,
  NoPeelableGroup,
  InfeasibleConstraints,
  TopologyMismatch,
  InvalidArgument,
};

const char* to_string(Errc code);

/// Every failure in the library surfaces as this exception; `code()` names the
/// condition so callers (and tests) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

struct Edge {
  EdgeId id = 0;
  std::size_t tail = 0;  // vertex index, closer to the root
  std::size_t head = 0;  // vertex index, closer to the leaves
  double length = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double theta = 0.0;  // direction of e_i (tail -> head), radians in [0, 2pi)

  double speed(int channel) const { return channel == 0 ? k1 : k2; }
  /// diag(k1, k2)
  Mat2 impedance() const;
  /// diag(k1^2, k2^2)
  Mat2 stiffness() const;
};

/// Raw, unvalidated input to build_tree (mirrors the JSON description file).
struct TreeDescription {
  struct EdgeRecord {
    EdgeId id = 0;
    VertexId tail = 0;
    VertexId head = 0;
    double length = 0.0;
    double k1 = 0.0;
    double k2 = 0.0;
    double theta = 0.0;
  };
  std::vector<VertexId> vertices;
  std::vector<EdgeRecord> edges;
  VertexId root = 0;
  /// Optional; when empty the degree-1 vertices are taken in id order, root last.
  std::vector<VertexId> boundary_order;
};

/// Immutable rooted planar metric tree. Edges are stored oriented tail -> head
/// away from the root; build_tree flips any edge given the other way round.
class MetricTree {
 public:
  std::size_t vertex_count() const { return vertex_ids_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  const Edge& edge(std::size_t e) const { return edges_[e]; }
  std::span<const Edge> edges() const { return edges_; }
  VertexId vertex_id(std::size_t v) const { return vertex_ids_[v]; }
  std::span<const VertexId> vertex_ids() const { return vertex_ids_; }
  std::size_t vertex_index(VertexId id) const;
  std::size_t edge_index(EdgeId id) const;

  std::span<const std::size_t> incident(std::size_t v) const { return incident_[v]; }
  std::size_t degree(std::size_t v) const { return incident_[v].size(); }
  bool is_boundary(std::size_t v) const { return incident_[v].size() == 1; }

  std::size_t root() const { return root_; }
  /// Boundary vertex indices gamma_1..gamma_m, root last.
  std::span<const std::size_t> boundary() const { return boundary_; }
  /// Position of a boundary vertex in boundary(); throws NotIncident otherwise.
  std::size_t boundary_position(std::size_t v) const;

  std::size_t other_end(std::size_t e, std::size_t v) const;
  /// Edge towards the root; nullopt for the root itself.
  std::optional<std::size_t> parent_edge(std::size_t v) const { return parent_edge_[v]; }
  /// +1 when edge e leaves v (v is its tail), -1 when it arrives (v is its head).
  double away_sign(std::size_t v, std::size_t e) const;
  /// Direction angle of edge e seen from v, pointing away from v.
  double away_angle(std::size_t v, std::size_t e) const;
  /// Edge indices on the unique path from a to b.
  std::vector<std::size_t> path_edges(std::size_t a, std::size_t b) const;

  TreeDescription describe() const;

 private:
  friend MetricTree build_tree(const TreeDescription&);

  std::vector<VertexId> vertex_ids_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> incident_;
  std::vector<std::optional<std::size_t>> parent_edge_;
  std::vector<std::size_t> boundary_;
  std::size_t root_ = 0;
};

MetricTree build_tree(const TreeDescription& description);

/// [[cos a, -sin a], [sin a, cos a]]
Mat2 rotation_matrix(double alpha);

/// Wraps into [0, 2pi).
double normalize_angle(double alpha);
/// Signed distance between two angles modulo `period`, in (-period/2, period/2].
double angle_distance(double a, double b, double period);

/// alpha_ij, counterclockwise from edge i to edge j, both frames pointing away
/// from `vertex`. R(alpha_ij) maps local components of edge j to those of edge i.
double angle_between(const MetricTree& tree, std::size_t vertex, std::size_t edge_i,
                     std::size_t edge_j);

/// Sum of l_e / k_{e,channel} along the path between two boundary vertices.
double channel_travel_time(const MetricTree& tree, std::size_t a, std::size_t b, int channel);

/// Maximum over boundary pairs of sum l_e * max(1/k_e1, 1/k_e2).
double optical_diameter(const MetricTree& tree);

/// Shortest one-way travel time over all edges and channels.
double min_edge_time(const MetricTree& tree);

inline constexpr int kTreeSchemaVersion = 1;

std::string serialize(const MetricTree& tree);
MetricTree deserialize(const std::string& text);
/// Parses without validating the tree structure.
TreeDescription parse_description(const std::string& text);

}  // namespace treewave
