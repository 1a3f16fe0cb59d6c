#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treewave/graph.hpp"
#include "treewave/inverse.hpp"
#include "treewave/measurement.hpp"
#include "treewave/spectral.hpp"
#include "treewave/wavefront.hpp"

namespace treewave {

struct CheckLine {
  std::string name;
  double value = 0.0;      // measured residual
  double threshold = 0.0;  // pass when value <= threshold
  bool pass = false;
  bool gating = true;  // informational lines do not affect the verdict
  std::string detail;
};

/// Literal and stiffness-weighted block symmetry residuals, relative to the
/// largest block norm. Weighted: M_ij D'_j = (M_ji D'_i)^T with D' = diag(k1^2, k2^2)
/// of the boundary edges.
struct SymmetryResidual {
  double literal = 0.0;
  double weighted = 0.0;
};

SymmetryResidual tw_symmetry(const MetricTree& tree, const TWSample& m);

/// Spike-by-spike comparison of R_ij and R_ji^T up to `until`, relative to the
/// largest coefficient. Unmatched spikes count with their full size.
SymmetryResidual response_reciprocity(const MetricTree& tree, const ResponseMatrix& r, double until,
                                      double time_tol = 1e-10);

/// Largest |M - Laplace(R)| / max(10 s e^{-s (T - d)}, floor) over all samples
/// and entries, floor = 100 eps max|M(s)|; passes when at most 1.
struct LaplaceResidual {
  double worst_ratio = 0.0;
  double worst_abs = 0.0;
  double worst_s = 0.0;
  std::size_t floor_limited = 0;  // entries where the roundoff floor exceeds the bound
};

LaplaceResidual laplace_check(const MetricTree& tree, const ResponseMatrix& r, const std::vector<TWSample>& tw);

/// Largest relative energy-flux defect at the centre of `count` random
/// vertices (degree 2..6, random speeds and directions).
double random_vertex_energy_defect(std::uint64_t seed, int count, bool corrupt = false);

/// Tree obtained by cutting everything below `vertex`, which becomes a
/// boundary vertex.
MetricTree truncate_below(const MetricTree& tree, std::size_t vertex);

/// Peeled TW blocks of every recovery level against the TW of the matching
/// truncated true tree, at every retained sample.
struct PeelComparison {
  double worst = 0.0;  // relative Frobenius error of one sample's matrix
  std::size_t samples = 0;
  std::size_t levels = 0;
  std::string detail;
};

PeelComparison peel_vs_direct(const MetricTree& truth, const RecoveredTree& recovered);

struct SelfcheckOptions {
  double horizon_factor = 2.5;
  double exact_factor = 1.0;  // exact spikes up to this multiple of d
  int s_count = 32;
  bool corrupt_scatter = false;
  unsigned threads = 1;
};

/// Energy, symmetry, Laplace, reciprocity and peel-vs-direct on one tree.
std::vector<CheckLine> run_selfcheck(const MetricTree& tree, const SelfcheckOptions& options = {});

std::string selfcheck_report(const std::vector<CheckLine>& lines);
std::string selfcheck_csv(const std::vector<CheckLine>& lines);

}  // namespace treewave
