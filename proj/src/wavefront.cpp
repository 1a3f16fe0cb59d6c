#include "treewave/wavefront.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

namespace treewave {

ScatterTable precompute_scatter(const MetricTree& tree) {
  ScatterTable table;
  table.vertices.resize(tree.vertex_count());
  for (std::size_t v = 0; v < tree.vertex_count(); ++v) {
    VertexScatter& vs = table.vertices[v];
    const auto inc = tree.incident(v);
    vs.edges.assign(inc.begin(), inc.end());
    const std::size_t k = inc.size();
    vs.out.assign(k, std::vector<Mat2>(k, Mat2::Zero()));
    if (k == 1) {
      vs.out[0][0] = -Mat2::Identity();  // clamped boundary: Dirichlet image
      continue;
    }
    for (std::size_t i = 0; i < k; ++i) {
      const Edge& ei = tree.edge(inc[i]);
      Mat2 system = ei.impedance();
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i) continue;
        const Mat2 r = rotation_matrix(angle_between(tree, v, inc[i], inc[j]));
        system += r * tree.edge(inc[j]).impedance() * r.transpose();
      }
      const double det = system.determinant();
      if (!(std::abs(det) > 1e-300) || !std::isfinite(det))
        throw Error(Errc::SingularVertexSystem, "vertex " + std::to_string(tree.vertex_id(v)));
      // Vertex displacement for incoming p: v = system^{-1} 2 D_i p.
      const Mat2 to_vertex = system.inverse() * (2.0 * ei.impedance());
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i)
          vs.out[i][i] = to_vertex - Mat2::Identity();
        else
          vs.out[i][j] = rotation_matrix(angle_between(tree, v, inc[j], inc[i])) * to_vertex;
      }
    }
  }
  return table;
}

double energy_flux_defect(const MetricTree& tree, const ScatterTable& table) {
  double worst = 0.0;
  for (std::size_t v = 0; v < table.vertices.size(); ++v) {
    const VertexScatter& vs = table.vertices[v];
    for (std::size_t i = 0; i < vs.edges.size(); ++i)
      for (int ch = 0; ch < kChannels; ++ch) {
        const double incoming = tree.edge(vs.edges[i]).speed(ch);
        double outgoing = 0.0;
        for (std::size_t j = 0; j < vs.edges.size(); ++j)
          for (int c = 0; c < kChannels; ++c) {
            const double amp = vs.out[i][j](c, ch);
            outgoing += tree.edge(vs.edges[j]).speed(c) * amp * amp;
          }
        worst = std::max(worst, std::abs(incoming - outgoing) / incoming);
      }
  }
  return worst;
}

namespace {

struct Front {
  double time;
  std::size_t edge;
  int channel;
  std::size_t to_vertex;
  double amplitude;  // in the edge's tail -> head frame
  EdgeId edge_id;
  bool toward_head;
};

struct LaterFirst {
  bool operator()(const Front& a, const Front& b) const {
    return std::tie(a.time, a.edge_id, a.channel, a.toward_head) >
           std::tie(b.time, b.edge_id, b.channel, b.toward_head);
  }
};

}  // namespace

ResponseRow simulate_source(const MetricTree& tree, const ScatterTable& table, std::size_t source, int channel,
                            const SimulationOptions& opt) {
  if (!(opt.horizon > 0.0)) throw Error(Errc::InvalidArgument, "horizon must be positive");
  if (!tree.is_boundary(source)) throw Error(Errc::InvalidArgument, "source must be a boundary vertex");

  ResponseRow row;
  const auto bnd = tree.boundary();
  row.receivers.resize(bnd.size());
  row.short_horizon = opt.horizon < 2.0 * optical_diameter(tree);
  std::vector<int> receiver_of(tree.vertex_count(), -1);
  for (std::size_t j = 0; j < bnd.size(); ++j) receiver_of[bnd[j]] = static_cast<int>(j);

  // Fronts up to exact_until live in a queue; later ones are summed into fixed
  // bins of width lump() per (edge, channel, direction), with an
  // amplitude-weighted arrival time. With a budget the queue runs past the
  // floor until the budget is spent, then the tail starts at the current time.
  const double floor = opt.exact_until();
  const bool extend = opt.exact_budget > 0 && floor < opt.horizon;
  double exact_until = extend ? opt.horizon : floor;
  const double lump = opt.lump();
  std::priority_queue<Front, std::vector<Front>, LaterFirst> queue;
  struct Lump {
    Front front;
    double weight = 0.0;
  };
  std::vector<std::vector<Lump>> bins;
  auto allocate_bins = [&] {
    if (exact_until < opt.horizon)
      bins.resize(static_cast<std::size_t>((opt.horizon - exact_until) / lump) + 2);
  };
  allocate_bins();
  std::size_t current_bin = 0;
  bool in_tail = false;
  auto bin_front = [&](const Front& f) {
    std::size_t b = static_cast<std::size_t>((f.time - exact_until) / lump);
    if (in_tail) b = std::max(b, current_bin + 1);  // never into a bin being processed
    if (b >= bins.size()) return;
    auto& bin = bins[b];
    auto same = std::find_if(bin.begin(), bin.end(), [&](const Lump& l) {
      return l.front.edge == f.edge && l.front.channel == f.channel && l.front.to_vertex == f.to_vertex;
    });
    const double w = std::abs(f.amplitude);
    if (same == bin.end()) {
      Front g = f;
      g.time = w * f.time;
      bin.push_back({g, w});
    } else {
      same->front.amplitude += f.amplitude;
      same->front.time += w * f.time;
      same->weight += w;
    }
  };
  auto launch = [&](double t0, std::size_t e, int ch, std::size_t from, double amp) {
    if (std::abs(amp) < opt.prune_eps || amp == 0.0) return;
    const Edge& ed = tree.edge(e);
    const double t = t0 + ed.length / ed.speed(ch);
    if (t > opt.horizon) return;
    const std::size_t to = ed.tail == from ? ed.head : ed.tail;
    const Front f{t, e, ch, to, amp, ed.id, to == ed.head};
    if (t <= exact_until) queue.push(f);
    else bin_front(f);
  };

  {
    const std::size_t e = tree.incident(source)[0];
    const Edge& ed = tree.edge(e);
    row.receivers[receiver_of[source]][channel].push_back({1, 0.0, -1.0 / ed.speed(channel)});
    launch(0.0, e, channel, source, tree.away_sign(source, e));
  }

  auto scatter = [&](const Front& f) {
    ++row.fronts_processed;
    if (std::abs(f.amplitude) < opt.prune_eps) return;
    const std::size_t v = f.to_vertex;
    const double away_amp = tree.away_sign(v, f.edge) * f.amplitude;
    const VertexScatter& vs = table.vertices[v];
    if (opt.absorbing_root && v == tree.root()) {
      row.exits.push_back({f.time, f.channel, away_amp});
      return;
    }
    if (receiver_of[v] >= 0) {
      const double k = tree.edge(f.edge).speed(f.channel);
      // incident wave plus its Dirichlet image
      row.receivers[receiver_of[v]][f.channel].push_back({1, f.time, 2.0 * away_amp / k});
    }
    const std::size_t i = static_cast<std::size_t>(std::find(vs.edges.begin(), vs.edges.end(), f.edge) -
                                                   vs.edges.begin());
    for (std::size_t j = 0; j < vs.edges.size(); ++j) {
      const Vec2 out = vs.out[i][j].col(f.channel) * away_amp;
      const double sign = tree.away_sign(v, vs.edges[j]);
      for (int c = 0; c < kChannels; ++c) launch(f.time, vs.edges[j], c, v, sign * out[c]);
    }
  };

  std::vector<Front> batch;
  while (!queue.empty()) {
    const double t0 = queue.top().time;
    if (extend && exact_until == opt.horizon && t0 > floor && row.fronts_processed >= opt.exact_budget) {
      // Budget spent: everything from t0 on goes to the lumped tail.
      exact_until = t0 - 0.5 * opt.merge_tol;
      allocate_bins();
      while (!queue.empty()) {
        bin_front(queue.top());
        queue.pop();
      }
      break;
    }
    // Sum identical fronts arriving within merge_tol.
    batch.clear();
    while (!queue.empty() && queue.top().time <= t0 + opt.merge_tol) {
      const Front f = queue.top();
      queue.pop();
      auto same = std::find_if(batch.begin(), batch.end(), [&](const Front& b) {
        return b.edge == f.edge && b.channel == f.channel && b.to_vertex == f.to_vertex;
      });
      if (same == batch.end()) batch.push_back(f);
      else same->amplitude += f.amplitude;
    }
    for (const Front& f : batch) scatter(f);
  }
  in_tail = true;
  for (current_bin = 0; current_bin < bins.size(); ++current_bin) {
    for (std::size_t k = 0; k < bins[current_bin].size(); ++k) {
      Front f = bins[current_bin][k].front;
      const double w = bins[current_bin][k].weight;
      f.time = w > 0.0 ? f.time / w : exact_until + current_bin * lump;
      scatter(f);
    }
    bins[current_bin].clear();
    bins[current_bin].shrink_to_fit();
  }
  row.exact_until = exact_until;

  for (auto& rcv : row.receivers)
    for (auto& train : rcv) train = merge_spikes(train, opt.merge_tol, exact_until, opt.lump());
  return row;
}

ResponseRow simulate_source(const MetricTree& tree, std::size_t source, int channel,
                            const SimulationOptions& options) {
  return simulate_source(tree, precompute_scatter(tree), source, channel, options);
}

ResponseMatrix full_response(const MetricTree& tree, const SimulationOptions& options, bool include_root,
                             bool* short_horizon) {
  const ScatterTable table = precompute_scatter(tree);
  const auto bnd = tree.boundary();
  const std::size_t m = include_root ? bnd.size() : bnd.size() - 1;
  ResponseMatrix r;
  r.horizon = options.horizon;
  r.exact_horizon = options.horizon;
  for (std::size_t i = 0; i < m; ++i) r.boundary.push_back(tree.vertex_id(bnd[i]));
  r.blocks.assign(m, std::vector<ResponseBlock>(m));
  bool warn = false;
  for (std::size_t i = 0; i < m; ++i)
    for (int ch = 0; ch < kChannels; ++ch) {
      ResponseRow row = simulate_source(tree, table, bnd[i], ch, options);
      warn = warn || row.short_horizon;
      r.exact_horizon = std::min(r.exact_horizon, row.exact_until);
      for (std::size_t j = 0; j < m; ++j)
        for (int c = 0; c < kChannels; ++c) r.blocks[i][j].entries[ch][c] = std::move(row.receivers[j][c]);
    }
  if (short_horizon) *short_horizon = warn;
  return r;
}

SpikeTrain merge_spikes(const SpikeTrain& train, double time_tol) {
  return merge_spikes(train, time_tol, std::numeric_limits<double>::infinity(), time_tol);
}

SpikeTrain merge_spikes(const SpikeTrain& train, double time_tol, double late_from, double late_tol) {
  SpikeTrain sorted = train;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Spike& a, const Spike& b) {
    return std::tie(a.order, a.time) < std::tie(b.order, b.time);
  });
  SpikeTrain merged;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    const double tol = sorted[i].time > late_from ? late_tol : time_tol;
    double sum = 0.0, weight = 0.0, weighted_time = 0.0, magnitude = 0.0;
    while (j < sorted.size() && sorted[j].order == sorted[i].order && sorted[j].time - sorted[i].time <= tol) {
      const double w = std::abs(sorted[j].coeff);
      sum += sorted[j].coeff;
      magnitude += w;
      weight += w;
      weighted_time += w * sorted[j].time;
      ++j;
    }
    if (std::abs(sum) > 1e-15 * magnitude && sum != 0.0)
      merged.push_back({sorted[i].order, weight > 0.0 ? weighted_time / weight : sorted[i].time, sum});
    i = j;
  }
  std::stable_sort(merged.begin(), merged.end(), [](const Spike& a, const Spike& b) {
    return std::tie(a.time, a.order) < std::tie(b.time, b.order);
  });
  return merged;
}

double laplace_of_spikes(const SpikeTrain& train, double s) {
  double sum = 0.0;
  for (const Spike& sp : train) {
    const double decay = std::exp(-s * sp.time);
    sum += sp.order == 0 ? sp.coeff * decay : sp.coeff * s * decay;
  }
  return sum;
}

const Spike* first_spike(const SpikeTrain& train, double threshold) {
  for (const Spike& sp : train)
    if (std::abs(sp.coeff) > threshold) return &sp;
  return nullptr;
}

}  // namespace treewave
