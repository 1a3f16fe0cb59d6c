#pragma once

#include <map>
#include <string>
#include <vector>

#include "treewave/graph.hpp"
#include "treewave/measurement.hpp"
#include "treewave/spectral.hpp"
#include "treewave/wavefront.hpp"

namespace treewave {

struct Tolerances {
  double stage1 = 1e-9;         // relative, time-domain extraction
  double time_match = 1e-8;     // seconds, matching predicted and measured spike times
  double spike_floor = 1e-10;   // relative coefficient below which a residual spike is noise
  double star = 1e-8;           // star-solve residuals and eigenvalue match
  double sibling = 1e-7;        // relative, sibling arrival criterion
  double isotropy = 1e-6;       // relative eigenvalue gap below which a direction is undefined
  double sign = 1e-6;           // relative amplitude scale below which a sign is unresolved
  double echo = 1e-6;           // relative residual of the single-edge echo model
  double peel = 1e-4;           // relative, asymptotic TW stages
  double peel_error = 1e-9;     // largest estimated relative error of a retained peeled sample
};

/// Leaf edge parameters and the reflection data of its inner vertex.
/// Reflection of a unit incoming front: channel 1 -> (a, b), channel 2 -> (b~, a~).
struct LeafReport {
  VertexId boundary = 0;
  double k1 = 0.0, k2 = 0.0, length = 0.0;
  double a = 0.0, b = 0.0, a_t = 0.0, b_t = 0.0;
  double residual = 0.0;  // worst relative cross-check mismatch
  int support = 0;        // entries whose first echo agrees with the length

  Vec2 xi() const { return {1.0 + a, b}; }
  Vec2 xi_t() const { return {b_t, 1.0 + a_t}; }
  /// rho(c_out, c_in)
  Mat2 reflection() const {
    Mat2 r;
    r << a, b_t, b, a_t;
    return r;
  }
  Mat2 impedance() const { return Vec2(k1, k2).asDiagonal(); }
};

LeafReport extract_leaf_params(const ResponseBlock& diag, VertexId boundary, const Tolerances& tol = {});

/// Groups of mutually sibling boundary edges. tau(i, j) is the reduced first
/// arrival between i and j (infinity when unknown).
std::vector<std::vector<std::size_t>> detect_siblings(const std::vector<LeafReport>& reports,
                                                      const Eigen::MatrixXd& tau, double tol);

struct StarSolution {
  std::vector<VertexId> group;
  std::vector<Mat2> A;
  std::vector<double> A_residual;
  /// Away direction of each member relative to member 0 (phi[0] = 0); mod pi
  /// unless resolved[k].
  std::vector<double> phi;
  std::vector<char> resolved;
  std::vector<char> isotropic;  // member direction undefined from A
  double phi_parent = 0.0;      // mod pi; NaN when the parent is isotropic
  bool parent_isotropic = false;
  double parent_k1 = 0.0, parent_k2 = 0.0;  // parent_k1 >= parent_k2
  Mat2 B = Mat2::Zero();                    // parent contribution in member 0's frame
  double eigen_mismatch = 0.0;
  double conjugation_residual = 0.0;
  double parent_spread = 0.0;  // disagreement of B across members

  double alpha(std::size_t k, std::size_t l) const { return phi[l] - phi[k]; }
};

StarSolution solve_star(const std::vector<LeafReport>& group, const Tolerances& tol = {});

struct SignResolution {
  double alpha = 0.0;  // mod 2pi when resolved, else the input
  bool resolved = false;
  double residual = 0.0;  // relative misfit of the chosen sign
};

/// `predicted` are first-spike coefficients computed with angle alpha; alpha+pi
/// negates them.
SignResolution resolve_angle_sign(double alpha, const std::vector<double>& predicted,
                                  const std::vector<double>& measured, double tol);

/// TW data over a current boundary whose entries may be virtual vertices.
struct ReducedTW {
  std::vector<VertexId> boundary;
  std::vector<TWSample> samples;
  std::vector<double> error;  // estimated relative error per sample
  std::vector<char> retained;
  std::size_t retained_count() const;
};

ReducedTW initial_reduced_tw(const std::vector<TWSample>& samples);

struct PeelMember {
  VertexId boundary;  // label in the current ReducedTW
  double length, k1, k2;
};

struct PeelResult {
  ReducedTW tw;                     // group replaced by `virtual_id` (appended last)
  double continuity_residual = 0.0; // worst value mismatch at the internal vertex
  std::vector<char> flipped;        // members whose direction was flipped by pi
};

/// Peels one star. phi may be updated by pi for members without a resolved
/// sign, choosing the direction that makes the vertex values continuous.
PeelResult peel_tw(const ReducedTW& tw, const std::vector<PeelMember>& group, StarSolution& star,
                   VertexId virtual_id, const Tolerances& tol = {});

struct TWExtraction {
  LeafReport report;
  std::vector<double> decay;  // tau to every other current boundary entry (inf if below floor)
  std::vector<std::string> flags;
  std::size_t window = 0;     // samples used in the length regression
  double channel_mismatch = 0.0;
};

TWExtraction extract_from_tw(const ReducedTW& tw, VertexId boundary, double k1, double k2,
                             const Tolerances& tol = {});

struct EdgeProvenance {
  EdgeId id = 0;
  std::string length_stage, speed_stage, angle_stage;
  bool direction_resolved = false;
  double length_residual = 0.0;   // disagreement between independent length estimates
  double speed_residual = 0.0;
};

struct PeelLevel {
  int level = 0;
  std::vector<VertexId> group;
  VertexId virtual_id = 0;
  std::vector<VertexId> boundary_after;
  std::map<VertexId, std::vector<VertexId>> leaves_below;  // for virtual labels
  std::map<VertexId, int> edges_below;                     // edge count of the cut subtree
  double star_residual = 0.0, eigen_mismatch = 0.0, echo_residual = 0.0;
  double continuity_residual = 0.0;
  double tw_length = 0.0;  // length from the TW route (0 if unavailable)
  std::size_t retained = 0;
  ReducedTW tw;            // reduced TW after this peel
};

struct RecoveredTree {
  MetricTree tree;
  std::vector<EdgeProvenance> provenance;
  std::vector<std::string> flags;  // ambiguities that do not stop the recovery
  std::vector<std::string> log;
  std::vector<PeelLevel> levels;
  std::vector<LeafReport> leaves;
  std::vector<StarSolution> stars;

  bool ambiguous() const { return !flags.empty(); }
  std::vector<EdgeId> resolved_edges() const;
};

RecoveredTree recover_tree(const Measurement& data, const Tolerances& tol = {});

std::string serialize_recovered(const RecoveredTree& r);
/// Reads the tree part and the resolved-edge list of a recovered-tree file.
MetricTree deserialize_recovered(const std::string& text, std::vector<EdgeId>* resolved = nullptr);
std::string recovery_report(const RecoveredTree& r);

}  // namespace treewave
