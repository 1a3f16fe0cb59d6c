#pragma once

#include <string>
#include <vector>

#include "treewave/spectral.hpp"
#include "treewave/wavefront.hpp"

namespace treewave {

inline constexpr int kMeasurementSchemaVersion = 1;

/// Boundary data available to the inverse problem: the time-domain response
/// and TW samples over the non-root boundary, plus the boundary labelling.
struct Measurement {
  ResponseMatrix response;
  std::vector<TWSample> tw;
  std::vector<VertexId> boundary_order;  // every boundary vertex, root last
  VertexId root = 0;
};

/// Simulates both data sets for `tree`.
Measurement measure(const MetricTree& tree, const SimulationOptions& options, const std::vector<double>& s_grid,
                    unsigned threads = 1);

std::string serialize_measurement(const Measurement& m);
Measurement deserialize_measurement(const std::string& text);

}  // namespace treewave
