#include "treewave/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <queue>
#include <set>

#include <json.hpp>

namespace treewave {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::Disconnected: return "Disconnected";
    case Errc::NonPositiveParameter: return "NonPositiveParameter";
    case Errc::RootNotBoundary: return "RootNotBoundary";
    case Errc::NotIncident: return "NotIncident";
    case Errc::ParseError: return "ParseError";
    case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case Errc::SingularVertexSystem: return "SingularVertexSystem";
    case Errc::IllConditioned: return "IllConditioned";
    case Errc::MissingLeadingSpike: return "MissingLeadingSpike";
    case Errc::InconsistentArrivals: return "InconsistentArrivals";
    case Errc::SpikeOverlap: return "SpikeOverlap";
    case Errc::NonTransitiveSiblingRelation: return "NonTransitiveSiblingRelation";
    case Errc::EmptyGrouping: return "EmptyGrouping";
    case Errc::DegenerateLeafData: return "DegenerateLeafData";
    case Errc::EigenvalueMismatch: return "EigenvalueMismatch";
    case Errc::IsotropicAmbiguity: return "IsotropicAmbiguity";
    case Errc::NegativeDiscriminant: return "NegativeDiscriminant";
    case Errc::SingularPeel: return "SingularPeel";
    case Errc::FrameMismatch: return "FrameMismatch";
    case Errc::FitWindowTooSmall: return "FitWindowTooSmall";
    case Errc::ChannelLengthMismatch: return "ChannelLengthMismatch";
    case Errc::BelowNoiseFloor: return "BelowNoiseFloor";
    case Errc::NoPeelableGroup: return "NoPeelableGroup";
    case Errc::InfeasibleConstraints: return "InfeasibleConstraints";
    case Errc::TopologyMismatch: return "TopologyMismatch";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

Mat2 Edge::impedance() const { return Vec2(k1, k2).asDiagonal(); }
Mat2 Edge::stiffness() const { return Vec2(k1 * k1, k2 * k2).asDiagonal(); }

Mat2 rotation_matrix(double alpha) {
  const double c = std::cos(alpha);
  const double s = std::sin(alpha);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

double normalize_angle(double alpha) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(alpha, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a -= two_pi;
  return a;
}

double angle_distance(double a, double b, double period) {
  double d = std::fmod(a - b, period);
  if (d > 0.5 * period) d -= period;
  if (d <= -0.5 * period) d += period;
  return d;
}

std::size_t MetricTree::vertex_index(VertexId id) const {
  auto it = std::find(vertex_ids_.begin(), vertex_ids_.end(), id);
  if (it == vertex_ids_.end())
    throw Error(Errc::InvalidArgument, "unknown vertex id " + std::to_string(id));
  return static_cast<std::size_t>(it - vertex_ids_.begin());
}

std::size_t MetricTree::edge_index(EdgeId id) const {
  for (std::size_t e = 0; e < edges_.size(); ++e)
    if (edges_[e].id == id) return e;
  throw Error(Errc::InvalidArgument, "unknown edge id " + std::to_string(id));
}

std::size_t MetricTree::boundary_position(std::size_t v) const {
  for (std::size_t i = 0; i < boundary_.size(); ++i)
    if (boundary_[i] == v) return i;
  throw Error(Errc::NotIncident, "vertex " + std::to_string(vertex_ids_[v]) + " is not a boundary vertex");
}

std::size_t MetricTree::other_end(std::size_t e, std::size_t v) const {
  const Edge& ed = edges_[e];
  if (ed.tail == v) return ed.head;
  if (ed.head == v) return ed.tail;
  throw Error(Errc::NotIncident, "edge " + std::to_string(ed.id) + " not incident at vertex " +
                                     std::to_string(vertex_ids_[v]));
}

double MetricTree::away_sign(std::size_t v, std::size_t e) const {
  const Edge& ed = edges_[e];
  if (ed.tail == v) return 1.0;
  if (ed.head == v) return -1.0;
  throw Error(Errc::NotIncident, "edge " + std::to_string(ed.id) + " not incident at vertex " +
                                     std::to_string(vertex_ids_[v]));
}

double MetricTree::away_angle(std::size_t v, std::size_t e) const {
  const double theta = edges_[e].theta;
  return away_sign(v, e) > 0.0 ? theta : normalize_angle(theta + std::numbers::pi);
}

std::vector<std::size_t> MetricTree::path_edges(std::size_t a, std::size_t b) const {
  // Walk both ends up to their common ancestor.
  auto ancestors = [&](std::size_t v) {
    std::vector<std::size_t> chain{v};
    while (parent_edge_[v]) {
      v = edges_[*parent_edge_[v]].tail;
      chain.push_back(v);
    }
    return chain;
  };
  const auto up_a = ancestors(a);
  const auto up_b = ancestors(b);
  std::set<std::size_t> on_b(up_b.begin(), up_b.end());
  std::size_t meet = root_;
  for (std::size_t v : up_a)
    if (on_b.count(v)) {
      meet = v;
      break;
    }
  std::vector<std::size_t> path;
  for (std::size_t v = a; v != meet; v = edges_[*parent_edge_[v]].tail) path.push_back(*parent_edge_[v]);
  std::vector<std::size_t> tail_part;
  for (std::size_t v = b; v != meet; v = edges_[*parent_edge_[v]].tail) tail_part.push_back(*parent_edge_[v]);
  path.insert(path.end(), tail_part.rbegin(), tail_part.rend());
  return path;
}

TreeDescription MetricTree::describe() const {
  TreeDescription d;
  d.vertices = vertex_ids_;
  for (const Edge& e : edges_)
    d.edges.push_back({e.id, vertex_ids_[e.tail], vertex_ids_[e.head], e.length, e.k1, e.k2, e.theta});
  d.root = vertex_ids_[root_];
  for (std::size_t v : boundary_) d.boundary_order.push_back(vertex_ids_[v]);
  return d;
}

MetricTree build_tree(const TreeDescription& desc) {
  MetricTree t;
  t.vertex_ids_ = desc.vertices;
  std::map<VertexId, std::size_t> index;
  for (std::size_t i = 0; i < desc.vertices.size(); ++i) {
    if (!index.emplace(desc.vertices[i], i).second)
      throw Error(Errc::InvalidArgument, "duplicate vertex id " + std::to_string(desc.vertices[i]));
  }
  auto lookup = [&](VertexId id) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(Errc::InvalidArgument, "edge references unknown vertex " + std::to_string(id));
    return it->second;
  };

  const std::size_t nv = desc.vertices.size();
  std::set<EdgeId> edge_ids;
  t.incident_.assign(nv, {});
  for (const auto& r : desc.edges) {
    if (!edge_ids.insert(r.id).second)
      throw Error(Errc::InvalidArgument, "duplicate edge id " + std::to_string(r.id));
    if (!(r.length > 0.0) || !(r.k1 > 0.0) || !(r.k2 > 0.0) || !std::isfinite(r.length) ||
        !std::isfinite(r.k1) || !std::isfinite(r.k2) || !std::isfinite(r.theta))
      throw Error(Errc::NonPositiveParameter, "edge " + std::to_string(r.id) + " needs length, k1, k2 > 0");
    Edge e;
    e.id = r.id;
    e.tail = lookup(r.tail);
    e.head = lookup(r.head);
    if (e.tail == e.head) throw Error(Errc::CycleDetected, "self-loop on edge " + std::to_string(r.id));
    e.length = r.length;
    e.k1 = r.k1;
    e.k2 = r.k2;
    e.theta = normalize_angle(r.theta);
    t.incident_[e.tail].push_back(t.edges_.size());
    t.incident_[e.head].push_back(t.edges_.size());
    t.edges_.push_back(e);
  }
  if (nv == 0) throw Error(Errc::Disconnected, "empty tree");

  // Union-find for cycles, then BFS for connectivity and orientation.
  std::vector<std::size_t> parent(nv);
  for (std::size_t i = 0; i < nv; ++i) parent[i] = i;
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const Edge& e : t.edges_) {
    std::size_t a = find(e.tail), b = find(e.head);
    if (a == b) throw Error(Errc::CycleDetected, "edge " + std::to_string(e.id) + " closes a cycle");
    parent[a] = b;
  }
  if (t.edges_.size() + 1 != nv) throw Error(Errc::Disconnected, "tree must have N+1 vertices for N edges");

  t.root_ = lookup(desc.root);
  if (t.incident_[t.root_].size() != 1)
    throw Error(Errc::RootNotBoundary, "root " + std::to_string(desc.root) + " has degree " +
                                           std::to_string(t.incident_[t.root_].size()));

  t.parent_edge_.assign(nv, std::nullopt);
  std::vector<bool> seen(nv, false);
  std::queue<std::size_t> queue;
  queue.push(t.root_);
  seen[t.root_] = true;
  while (!queue.empty()) {
    std::size_t v = queue.front();
    queue.pop();
    for (std::size_t ei : t.incident_[v]) {
      Edge& e = t.edges_[ei];
      std::size_t w = e.tail == v ? e.head : e.tail;
      if (seen[w]) continue;
      if (e.tail != v) {
        std::swap(e.tail, e.head);
        e.theta = normalize_angle(e.theta + std::numbers::pi);
      }
      t.parent_edge_[w] = ei;
      seen[w] = true;
      queue.push(w);
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw Error(Errc::Disconnected, "tree is not connected");

  if (desc.boundary_order.empty()) {
    for (std::size_t v = 0; v < nv; ++v)
      if (v != t.root_ && t.incident_[v].size() == 1) t.boundary_.push_back(v);
    std::sort(t.boundary_.begin(), t.boundary_.end(),
              [&](std::size_t a, std::size_t b) { return t.vertex_ids_[a] < t.vertex_ids_[b]; });
    t.boundary_.push_back(t.root_);
  } else {
    std::set<std::size_t> listed;
    for (VertexId id : desc.boundary_order) {
      std::size_t v = lookup(id);
      if (t.incident_[v].size() != 1 || !listed.insert(v).second)
        throw Error(Errc::InvalidArgument, "boundary_order entry " + std::to_string(id) + " is not a distinct leaf");
      t.boundary_.push_back(v);
    }
    std::size_t leaves = 0;
    for (std::size_t v = 0; v < nv; ++v) leaves += t.incident_[v].size() == 1 ? 1 : 0;
    if (listed.size() != leaves)
      throw Error(Errc::InvalidArgument, "boundary_order must list every degree-1 vertex");
    if (!listed.count(t.root_)) throw Error(Errc::RootNotBoundary, "root missing from boundary_order");
    // Root goes last regardless of where it was listed.
    std::erase(t.boundary_, t.root_);
    t.boundary_.push_back(t.root_);
  }
  return t;
}

double angle_between(const MetricTree& tree, std::size_t vertex, std::size_t edge_i, std::size_t edge_j) {
  return normalize_angle(tree.away_angle(vertex, edge_j) - tree.away_angle(vertex, edge_i));
}

double channel_travel_time(const MetricTree& tree, std::size_t a, std::size_t b, int channel) {
  double t = 0.0;
  for (std::size_t e : tree.path_edges(a, b)) t += tree.edge(e).length / tree.edge(e).speed(channel);
  return t;
}

double optical_diameter(const MetricTree& tree) {
  const auto bnd = tree.boundary();
  double best = 0.0;
  for (std::size_t i = 0; i < bnd.size(); ++i)
    for (std::size_t j = i + 1; j < bnd.size(); ++j) {
      double t = 0.0;
      for (std::size_t e : tree.path_edges(bnd[i], bnd[j])) {
        const Edge& ed = tree.edge(e);
        t += ed.length * std::max(1.0 / ed.k1, 1.0 / ed.k2);
      }
      best = std::max(best, t);
    }
  return best;
}

double min_edge_time(const MetricTree& tree) {
  double best = std::numeric_limits<double>::infinity();
  for (const Edge& e : tree.edges()) best = std::min(best, e.length / std::max(e.k1, e.k2));
  return best;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using ordered_json = nlohmann::ordered_json;

template <class T>
T required(const ordered_json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw Error(Errc::ParseError, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::ParseError, std::string("field '") + key + "': " + ex.what());
  }
}

}  // namespace

std::string serialize(const MetricTree& tree) {
  const TreeDescription d = tree.describe();
  ordered_json j;
  j["version"] = kTreeSchemaVersion;
  j["vertices"] = ordered_json::array();
  for (VertexId v : d.vertices) j["vertices"].push_back({{"id", v}});
  j["edges"] = ordered_json::array();
  for (const auto& e : d.edges)
    j["edges"].push_back({{"id", e.id},
                          {"tail", e.tail},
                          {"head", e.head},
                          {"length", e.length},
                          {"k1", e.k1},
                          {"k2", e.k2},
                          {"theta", e.theta}});
  j["root"] = d.root;
  j["boundary_order"] = d.boundary_order;
  return j.dump(2) + "\n";
}

TreeDescription parse_description(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    throw Error(Errc::ParseError, ex.what());
  }
  const int version = required<int>(j, "version");
  if (version != kTreeSchemaVersion)
    throw Error(Errc::SchemaVersionMismatch, "tree file version " + std::to_string(version));
  TreeDescription d;
  for (const auto& v : required<ordered_json>(j, "vertices")) d.vertices.push_back(required<VertexId>(v, "id"));
  for (const auto& e : required<ordered_json>(j, "edges"))
    d.edges.push_back({required<EdgeId>(e, "id"), required<VertexId>(e, "tail"), required<VertexId>(e, "head"),
                       required<double>(e, "length"), required<double>(e, "k1"), required<double>(e, "k2"),
                       required<double>(e, "theta")});
  d.root = required<VertexId>(j, "root");
  d.boundary_order = required<std::vector<VertexId>>(j, "boundary_order");
  return d;
}

MetricTree deserialize(const std::string& text) { return build_tree(parse_description(text)); }

}  // namespace treewave
