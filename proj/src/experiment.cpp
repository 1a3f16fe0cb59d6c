#include "treewave/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace treewave {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Builder {
  const ExperimentConfig& cfg;
  std::mt19937_64 rng;
  std::vector<int> depth;                 // per vertex
  std::vector<std::vector<int>> children;
  std::vector<int> parent;

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

  int add_vertex(int from) {
    const int v = static_cast<int>(depth.size());
    depth.push_back(from < 0 ? 0 : depth[from] + 1);
    children.emplace_back();
    parent.push_back(from);
    if (from >= 0) children[from].push_back(v);
    return v;
  }
};

bool generate_shape(Builder& b) {
  const ExperimentConfig& cfg = b.cfg;
  b.add_vertex(-1);
  b.add_vertex(0);
  int edges = 1;
  if (cfg.shape == TreeShape::TwoEdge) {
    b.add_vertex(1);
    return true;
  }
  if (cfg.shape == TreeShape::Star) {
    for (int i = 1; i < cfg.edges; ++i) b.add_vertex(1);
    return true;
  }
  while (edges < cfg.edges) {
    const int remaining = cfg.edges - edges;
    std::vector<std::pair<int, int>> moves;  // (vertex, children to add)
    for (int v = 1; v < static_cast<int>(b.depth.size()); ++v) {
      const auto nc = static_cast<int>(b.children[v].size());
      if (nc == 0 && remaining >= 2 && b.depth[v] < cfg.depth) moves.emplace_back(v, 2);
      if (nc >= 2 && nc < cfg.max_children) moves.emplace_back(v, 1);
    }
    if (moves.empty()) return false;
    const auto [v, count] = moves[std::uniform_int_distribution<std::size_t>(0, moves.size() - 1)(b.rng)];
    for (int i = 0; i < count; ++i) b.add_vertex(v);
    edges += count;
  }
  return true;
}

}  // namespace

MetricTree generate_tree(const ExperimentConfig& cfg) {
  if (!(cfg.length_min > 0 && cfg.length_max >= cfg.length_min && cfg.speed_min > 0 &&
        cfg.speed_max >= cfg.speed_min && cfg.ratio_min > 0 && cfg.ratio_max >= cfg.ratio_min &&
        cfg.horizon_factor > 1.0))
    throw Error(Errc::InvalidArgument, "experiment ranges must be positive and horizon factor > 1");
  if (cfg.edges < 1 || (cfg.shape == TreeShape::Random && cfg.edges == 2))
    throw Error(Errc::InfeasibleConstraints, "random trees need 1 or at least 3 edges");
  const double ratio_cap = std::min(cfg.ratio_max, 1.0 - cfg.min_speed_separation);
  if (cfg.forbid_isotropic && ratio_cap < cfg.ratio_min)
    throw Error(Errc::InfeasibleConstraints, "speed ratio range leaves no room for the separation");

  for (int attempt = 0; attempt < 200; ++attempt) {
    Builder b{cfg, std::mt19937_64(cfg.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(attempt)), {}, {}, {}};
    if (!generate_shape(b)) continue;
    const int n = static_cast<int>(b.depth.size());
    if (*std::max_element(b.depth.begin(), b.depth.end()) > std::max(cfg.depth, 1) && cfg.shape == TreeShape::Random)
      continue;

    TreeDescription d;
    for (int v = 0; v < n; ++v) d.vertices.push_back(v);
    d.root = 0;
    std::vector<double> away(n, 0.0);  // direction of the edge into v, seen from its parent
    std::vector<double> speeds;
    bool ok = true;
    for (int v = 1; v < n && ok; ++v) {
      TreeDescription::EdgeRecord e;
      e.id = v - 1;
      e.tail = b.parent[v];
      e.head = v;
      e.length = b.uniform(cfg.length_min, cfg.length_max);
      bool speeds_ok = false;
      for (int t = 0; t < 100 && !speeds_ok; ++t) {
        e.k1 = b.uniform(cfg.speed_min, cfg.speed_max);
        e.k2 = e.k1 * (cfg.forbid_isotropic ? b.uniform(cfg.ratio_min, ratio_cap) : b.uniform(cfg.ratio_min, cfg.ratio_max));
        speeds_ok = std::all_of(speeds.begin(), speeds.end(), [&](double k) {
          return std::abs(k - e.k1) > 1e-3 * k && std::abs(k - e.k2) > 1e-3 * k;
        });
      }
      speeds.push_back(e.k1);
      speeds.push_back(e.k2);
      ok = speeds_ok;
      d.edges.push_back(e);
    }
    if (!ok) continue;

    // Directions: siblings and the incoming edge stay min_angle_separation apart.
    d.edges[0].theta = b.uniform(0.0, kTwoPi);
    away[1] = d.edges[0].theta;
    for (int v = 1; v < n && ok; ++v) {
      std::vector<double> taken{normalize_angle(away[v] + std::numbers::pi)};
      for (int c : b.children[v]) {
        bool placed = false;
        for (int t = 0; t < 1000 && !placed; ++t) {
          const double a = b.uniform(0.0, kTwoPi);
          placed = std::all_of(taken.begin(), taken.end(), [&](double x) {
            return std::abs(angle_distance(a, x, kTwoPi)) >= cfg.min_angle_separation;
          });
          if (placed) {
            taken.push_back(a);
            away[c] = a;
            d.edges[c - 1].theta = a;
          }
        }
        ok = ok && placed;
      }
    }
    if (!ok) continue;
    return build_tree(d);
  }
  throw Error(Errc::InfeasibleConstraints, "no tree satisfies the experiment constraints");
}

namespace {

struct Keyed {
  std::map<std::string, std::size_t> edge_by_key;
  std::vector<std::string> key_of_edge;
};

Keyed key_edges(const MetricTree& t) {
  Keyed k;
  k.key_of_edge.resize(t.edge_count());
  std::vector<std::vector<VertexId>> below(t.vertex_count());
  std::vector<int> edges_below(t.vertex_count(), 0);  // separates the edges of a chain
  // Edges are oriented away from the root; repeatedly fold heads into tails.
  std::vector<std::size_t> order;
  std::vector<std::size_t> stack{t.root()};
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    order.push_back(v);
    for (std::size_t e : t.incident(v))
      if (t.edge(e).tail == v) stack.push_back(t.edge(e).head);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t v = *it;
    if (t.is_boundary(v) && v != t.root()) below[v].push_back(t.vertex_id(v));
    if (auto p = t.parent_edge(v)) {
      auto& up = below[t.edge(*p).tail];
      up.insert(up.end(), below[v].begin(), below[v].end());
      edges_below[t.edge(*p).tail] += edges_below[v] + 1;
      std::vector<VertexId> ids = below[v];
      std::sort(ids.begin(), ids.end());
      std::ostringstream os;
      for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
      k.key_of_edge[*p] = "{" + os.str() + "}/" + std::to_string(edges_below[v] + 1);
      k.edge_by_key[k.key_of_edge[*p]] = *p;
    }
  }
  return k;
}

double rel(double truth, double got) { return std::abs(got - truth) / std::abs(truth); }

}  // namespace

Comparison compare_trees(const MetricTree& truth, const MetricTree& recovered, const std::vector<EdgeId>& resolved) {
  Comparison c;
  const Keyed kt = key_edges(truth), kr = key_edges(recovered);
  std::ostringstream diff;
  for (const auto& [key, e] : kt.edge_by_key)
    if (!kr.edge_by_key.count(key)) diff << "missing edge " << key << "\n";
  for (const auto& [key, e] : kr.edge_by_key)
    if (!kt.edge_by_key.count(key)) diff << "extra edge " << key << "\n";
  if (truth.vertex_id(truth.root()) != recovered.vertex_id(recovered.root())) diff << "root label differs\n";
  c.diff = diff.str();
  c.topology_match = c.diff.empty();

  for (const auto& [key, et] : kt.edge_by_key) {
    auto it = kr.edge_by_key.find(key);
    if (it == kr.edge_by_key.end()) continue;
    const Edge& a = truth.edge(et);
    const Edge& b = recovered.edge(it->second);
    EdgeComparison ec{key, a.id, b.id, rel(a.length, b.length), rel(a.k1, b.k1), rel(a.k2, b.k2)};
    c.max_length_error = std::max(c.max_length_error, ec.length_error);
    c.max_speed_error = std::max({c.max_speed_error, ec.k1_error, ec.k2_error});
    c.edges.push_back(ec);
  }
  if (!c.topology_match) return c;

  for (std::size_t v = 0; v < truth.vertex_count(); ++v) {
    const auto inc = truth.incident(v);
    if (inc.size() < 2) continue;
    const std::string vkey = kt.key_of_edge[*truth.parent_edge(v)];
    const std::size_t rv = recovered.edge(kr.edge_by_key.at(vkey)).head;
    for (std::size_t i = 0; i < inc.size(); ++i)
      for (std::size_t j = i + 1; j < inc.size(); ++j) {
        const std::size_t ri = kr.edge_by_key.at(kt.key_of_edge[inc[i]]);
        const std::size_t rj = kr.edge_by_key.at(kt.key_of_edge[inc[j]]);
        const double at = angle_between(truth, v, inc[i], inc[j]);
        const double ar = angle_between(recovered, rv, ri, rj);
        AngleComparison ac{vkey, kt.key_of_edge[inc[i]], kt.key_of_edge[inc[j]],
                           std::abs(angle_distance(at, ar, std::numbers::pi)),
                           std::abs(angle_distance(at, ar, kTwoPi)), false};
        auto has = [&](std::size_t e) {
          return std::find(resolved.begin(), resolved.end(), recovered.edge(e).id) != resolved.end();
        };
        ac.resolved = has(ri) && has(rj);
        c.max_angle_error_pi = std::max(c.max_angle_error_pi, ac.error_mod_pi);
        if (ac.resolved) c.max_angle_error_2pi = std::max(c.max_angle_error_2pi, ac.error_mod_2pi);
        c.angles.push_back(ac);
      }
  }
  return c;
}

std::string comparison_csv(const Comparison& c) {
  std::ostringstream os;
  os.precision(10);
  os << "kind,key,truth_id,recovered_id,length_rel,k1_rel,k2_rel,angle_mod_pi,angle_mod_2pi,resolved\n";
  for (const auto& e : c.edges)
    os << "edge,\"" << e.key << "\"," << e.truth_id << "," << e.recovered_id << "," << e.length_error << ","
       << e.k1_error << "," << e.k2_error << ",,,\n";
  for (const auto& a : c.angles)
    os << "angle,\"" << a.vertex << ":" << a.edge_i << "|" << a.edge_j << "\",,,,,," << a.error_mod_pi << ","
       << a.error_mod_2pi << "," << (a.resolved ? 1 : 0) << "\n";
  return os.str();
}

}  // namespace treewave
