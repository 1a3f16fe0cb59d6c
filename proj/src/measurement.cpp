#include "treewave/measurement.hpp"

#include <json.hpp>

namespace treewave {

using json = nlohmann::ordered_json;

Measurement measure(const MetricTree& tree, const SimulationOptions& options, const std::vector<double>& s_grid,
                    unsigned threads) {
  Measurement m;
  m.response = full_response(tree, options);
  m.tw = tw_samples(tree, s_grid, threads);
  for (std::size_t v : tree.boundary()) m.boundary_order.push_back(tree.vertex_id(v));
  m.root = tree.vertex_id(tree.root());
  return m;
}

namespace {

json spikes_to_json(const SpikeTrain& train) {
  json out = json::array();
  for (const Spike& s : train) out.push_back(json::array({s.order, s.time, s.coeff}));
  return out;
}

SpikeTrain spikes_from_json(const json& j) {
  SpikeTrain out;
  for (const json& s : j) {
    if (!s.is_array() || s.size() != 3) throw Error(Errc::ParseError, "spike must be [order, time, coeff]");
    out.push_back({s[0].get<int>(), s[1].get<double>(), s[2].get<double>()});
  }
  return out;
}

std::size_t position_of(const std::vector<VertexId>& ids, VertexId id) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return i;
  throw Error(Errc::ParseError, "unknown boundary id " + std::to_string(id));
}

}  // namespace

std::string serialize_measurement(const Measurement& m) {
  json j;
  j["version"] = kMeasurementSchemaVersion;
  j["horizon"] = m.response.horizon;
  j["exact_horizon"] = m.response.exact_horizon;
  j["root"] = m.root;
  j["boundary_order"] = m.boundary_order;
  j["sources"] = m.response.boundary;
  json blocks = json::array();
  const std::size_t n = m.response.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const ResponseBlock& b = m.response.blocks[i][k];
      json entries = json::array();
      for (int r = 0; r < kChannels; ++r)
        for (int c = 0; c < kChannels; ++c) entries.push_back(spikes_to_json(b.entries[r][c]));
      blocks.push_back({{"src", m.response.boundary[i]}, {"rcv", m.response.boundary[k]}, {"entries", entries}});
    }
  j["blocks"] = std::move(blocks);
  json tw = json::array();
  for (const TWSample& t : m.tw) {
    json tb = json::array();
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t k = 0; k < t.size(); ++k) {
        const Mat2& b = t.blocks[i][k];
        tb.push_back({{"i", t.boundary[i]}, {"j", t.boundary[k]}, {"m", {b(0, 0), b(0, 1), b(1, 0), b(1, 1)}}});
      }
    tw.push_back({{"s", t.s}, {"rcond", t.rcond}, {"blocks", tb}});
  }
  j["tw"] = std::move(tw);
  return j.dump() + "\n";
}

Measurement deserialize_measurement(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
  try {
    if (j.at("version").get<int>() != kMeasurementSchemaVersion)
      throw Error(Errc::SchemaVersionMismatch, "measurement version " + j.at("version").dump());
    Measurement m;
    m.response.horizon = j.at("horizon").get<double>();
    m.response.exact_horizon = j.value("exact_horizon", m.response.horizon);
    m.root = j.at("root").get<VertexId>();
    m.boundary_order = j.at("boundary_order").get<std::vector<VertexId>>();
    m.response.boundary = j.at("sources").get<std::vector<VertexId>>();
    const std::size_t n = m.response.boundary.size();
    m.response.blocks.assign(n, std::vector<ResponseBlock>(n));
    for (const json& b : j.at("blocks")) {
      const std::size_t i = position_of(m.response.boundary, b.at("src").get<VertexId>());
      const std::size_t k = position_of(m.response.boundary, b.at("rcv").get<VertexId>());
      const json& e = b.at("entries");
      if (e.size() != 4) throw Error(Errc::ParseError, "block needs 4 spike lists");
      for (int r = 0; r < kChannels; ++r)
        for (int c = 0; c < kChannels; ++c) m.response.blocks[i][k].entries[r][c] = spikes_from_json(e[2 * r + c]);
    }
    for (const json& t : j.at("tw")) {
      TWSample s;
      s.s = t.at("s").get<double>();
      s.rcond = t.value("rcond", 1.0);
      s.boundary = m.response.boundary;
      s.blocks.assign(n, std::vector<Mat2>(n, Mat2::Zero()));
      for (const json& b : t.at("blocks")) {
        const std::size_t i = position_of(s.boundary, b.at("i").get<VertexId>());
        const std::size_t k = position_of(s.boundary, b.at("j").get<VertexId>());
        const json& v = b.at("m");
        if (v.size() != 4) throw Error(Errc::ParseError, "TW block needs 4 reals");
        s.blocks[i][k] << v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>();
      }
      m.tw.push_back(std::move(s));
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
}

}  // namespace treewave
