// Recursive recovery. Every current boundary entry ("item") is either an
// original leaf or a virtual vertex standing for an already recovered
// subtree. Virtual edges are measured in the time domain: the recovered
// subtree below an edge is simulated with the edge absorbing, subtracted from
// the measured diagonal response of a leaf inside it, and the first residual
// spikes are the echoes from the edge's far vertex.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "inverse_util.hpp"
#include "treewave/inverse.hpp"

namespace treewave {

using detail::coeff_near;

std::vector<EdgeId> RecoveredTree::resolved_edges() const {
  std::vector<EdgeId> out;
  for (const EdgeProvenance& p : provenance)
    if (p.direction_resolved) out.push_back(p.id);
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = std::numbers::pi;
constexpr VertexId kModelTop = 2'000'000'000;
constexpr VertexId kModelInternal = 1'000'000'000;
constexpr double kPlaceholder = 1e-3;

struct RNode {
  bool leaf = false;
  VertexId id = 0;  // original id for leaves
};

struct REdge {
  int bottom = -1, top = -1;
  double length = 0.0, k1 = 0.0, k2 = 0.0;
  double phi_top = 0.0;     // away angle at the top vertex, in its local frame
  double phi_bottom = 0.0;  // away angle at the bottom vertex (internal bottoms)
  EdgeProvenance prov;
};

struct Transfer {
  bool ready = false;
  double L = 0.0;  // item edge length used in the model
  double t_up[2][2], a_up[2][2];    // [source ch][exit ch] at the item's top
  double t_dn[2][2], sig[2][2];     // [launch ch][receiver ch] at the representative leaf
  SpikeTrain known[2][2];           // representative leaf diagonal response, edge absorbing
  std::vector<Exit> exits[2];       // all exits at the top per source channel, model length L
  SpikeTrain down[2][2];            // [launch ch][receiver ch], model length L
};

struct Item {
  VertexId label = 0;
  int edge = -1;
  LeafReport report;
  VertexId rep = 0;    // representative original leaf
  double offset = 0.0; // fastest time from rep to the bottom of the item edge
  std::vector<VertexId> leaves;
  int edges_below = 0;  // recovered edges below the item's vertex
  Transfer transfer;
};

struct State {
  std::vector<RNode> nodes;
  std::vector<REdge> edges;
  std::vector<Item> items;
};

struct Context {
  const Measurement& data;
  const Tolerances& tol;
  double exact = 0.0;
  std::map<VertexId, std::size_t> pos;
  double floor = 0.0;

  const SpikeTrain& measured(VertexId src, VertexId rcv, int r, int c) const {
    return data.response.blocks[pos.at(src)][pos.at(rcv)].entries[r][c];
  }
};

/// Simulation model of the subtree below an item edge: the item edge hangs
/// from an absorbing root and has length L.
MetricTree build_model(const State& st, int edge, double L) {
  TreeDescription d;
  d.root = kModelTop;
  d.vertices.push_back(kModelTop);
  auto node_id = [&](int n) { return st.nodes[n].leaf ? st.nodes[n].id : kModelInternal + n; };
  struct Pending {
    int edge;
    VertexId tail;
    double theta;
    double length;
  };
  std::vector<Pending> stack{{edge, kModelTop, 0.0, L}};
  EdgeId next = 0;
  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    const REdge& e = st.edges[p.edge];
    d.vertices.push_back(node_id(e.bottom));
    d.edges.push_back({next++, p.tail, node_id(e.bottom), p.length, e.k1, e.k2, normalize_angle(p.theta)});
    if (st.nodes[e.bottom].leaf) continue;
    const double offset = p.theta + kPi - e.phi_bottom;
    for (std::size_t c = 0; c < st.edges.size(); ++c)
      if (st.edges[c].top == e.bottom)
        stack.push_back({static_cast<int>(c), node_id(e.bottom), st.edges[c].phi_top + offset, st.edges[c].length});
  }
  return build_tree(d);
}

Transfer compute_transfer(const State& st, const Item& it, double L, const Context& ctx) {
  const MetricTree model = build_model(st, it.edge, L);
  const ScatterTable table = precompute_scatter(model);
  SimulationOptions opt;
  opt.horizon = ctx.exact;
  opt.absorbing_root = true;
  const std::size_t rep = model.vertex_index(it.rep);
  const std::size_t top = model.root();
  const std::size_t rep_pos = model.boundary_position(rep);
  Transfer t;
  t.L = L;
  for (int r = 0; r < kChannels; ++r) {
    ResponseRow row = simulate_source(model, table, rep, r, opt);
    for (int c = 0; c < kChannels; ++c) {
      t.t_up[r][c] = kInf;
      t.a_up[r][c] = 0.0;
      for (const Exit& x : row.exits)
        if (x.channel == c && std::abs(x.amplitude) > ctx.tol.spike_floor && x.time < t.t_up[r][c]) t.t_up[r][c] = x.time;
      for (const Exit& x : row.exits)
        if (x.channel == c && std::abs(x.time - t.t_up[r][c]) <= ctx.tol.time_match) t.a_up[r][c] += x.amplitude;
      t.known[r][c] = std::move(row.receivers[rep_pos][c]);
    }
    t.exits[r] = std::move(row.exits);
  }
  for (int c = 0; c < kChannels; ++c) {
    ResponseRow row = simulate_source(model, table, top, c, opt);
    for (int r = 0; r < kChannels; ++r) {
      const SpikeTrain& train = row.receivers[rep_pos][r];
      t.t_dn[c][r] = detail::first_arrival(train, ctx.floor, kInf);
      t.sig[c][r] = std::isfinite(t.t_dn[c][r]) ? coeff_near(train, t.t_dn[c][r], ctx.tol.time_match) : 0.0;
      t.down[c][r] = train;
    }
  }
  t.ready = true;
  return t;
}

/// Moves the model length of the item edge from t.L to L.
Transfer relength(Transfer t, double k1, double k2, double L) {
  const double k[2] = {k1, k2};
  for (int a = 0; a < kChannels; ++a)
    for (int b = 0; b < kChannels; ++b) {
      t.t_up[a][b] += (L - t.L) / k[b];
      t.t_dn[a][b] += (L - t.L) / k[a];
    }
  t.L = L;
  return t;
}

struct Echo {
  double length = 0.0;
  Mat2 rho = Mat2::Zero();
  int support = 0;
  double residual = 0.0;
};

/// Length and far-vertex reflection of an item edge from the residual echoes
/// at its representative leaf.
Echo extract_echo(const Item& it, const Transfer& t, double kp1, double kp2, const Context& ctx) {
  const double kp[2] = {kp1, kp2};
  const Tolerances& tol = ctx.tol;
  // Earliest echo path per entry: up and down the item edge on the fast
  // channel, or on the slow one when the fast one carries nothing (decoupled
  // isotropic channels).
  double T[2], Tp[2], inv_up[2], inv_dn[2];
  for (int r = 0; r < kChannels; ++r) {
    const int a = std::isfinite(t.t_up[r][0]) ? 0 : 1;
    const int b = std::isfinite(t.t_dn[0][r]) ? 0 : 1;
    T[r] = t.t_up[r][a] - t.L / kp[a];
    Tp[r] = t.t_dn[b][r] - t.L / kp[b];
    inv_up[r] = 1.0 / kp[a];
    inv_dn[r] = 1.0 / kp[b];
  }
  SpikeTrain residual[2][2];
  double cand[2][2], rate[2][2];
  for (int r = 0; r < kChannels; ++r)
    for (int c = 0; c < kChannels; ++c) {
      SpikeTrain both;
      for (const Spike& sp : ctx.measured(it.rep, it.rep, r, c))
        if (sp.time <= ctx.exact) both.push_back(sp);
      for (const Spike& sp : t.known[r][c])
        if (sp.time <= ctx.exact) both.push_back({sp.order, sp.time, -sp.coeff});
      for (const Spike& sp : merge_spikes(both, tol.time_match))
        if (std::abs(sp.coeff) > ctx.floor) residual[r][c].push_back(sp);
      cand[r][c] = kInf;
      rate[r][c] = inv_up[r] + inv_dn[c];
      if (!residual[r][c].empty() && std::isfinite(T[r] + Tp[c]))
        cand[r][c] = (residual[r][c].front().time - T[r] - Tp[c]) / rate[r][c];
    }
  Echo e;
  e.length = kInf;
  for (auto& row : cand)
    for (double v : row) e.length = std::min(e.length, v);
  if (!std::isfinite(e.length) || !(e.length > 0.0))
    throw Error(Errc::InconsistentArrivals, "no echo from above item " + std::to_string(it.label) +
                                                " within the exact horizon");
  for (int r = 0; r < kChannels; ++r)
    for (int c = 0; c < kChannels; ++c)
      if (std::isfinite(cand[r][c]) && std::abs(cand[r][c] - e.length) * rate[r][c] <= tol.time_match) ++e.support;

  // Every first-order echo (one reflection at the far vertex) is a known
  // kernel times one entry of rho. Later paths (second reflections, or
  // excursions past the far vertex) arrive at generically different times.
  struct Term {
    double time;
    int unknown;  // c_out * 2 + c_in
    double coeff;
  };
  Eigen::MatrixXd A(0, 4);
  Eigen::VectorXd y(0);
  auto push = [&](const Eigen::RowVector4d& row, double v) {
    A.conservativeResize(A.rows() + 1, 4);
    A.row(A.rows() - 1) = row;
    y.conservativeResize(y.size() + 1);
    y[y.size() - 1] = v;
  };
  for (int r = 0; r < kChannels; ++r)
    for (int q = 0; q < kChannels; ++q) {
      const double end = ctx.exact - 10.0 * tol.time_match;
      std::vector<Term> terms;
      for (const Exit& x : t.exits[r])
        for (int cc = 0; cc < kChannels; ++cc) {
          const double shift = x.time + (e.length - t.L) * (1.0 / kp[x.channel] + 1.0 / kp[cc]);
          for (const Spike& sp : t.down[cc][q]) {
            if (shift + sp.time > end) break;
            terms.push_back({shift + sp.time, cc * 2 + x.channel, x.amplitude * sp.coeff});
          }
        }
      std::sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) { return a.time < b.time; });
      std::vector<char> used(residual[r][q].size(), 0);
      for (std::size_t i = 0; i < terms.size();) {
        Eigen::RowVector4d row = Eigen::RowVector4d::Zero();
        std::size_t j = i;
        for (; j < terms.size() && terms[j].time - terms[i].time <= tol.time_match; ++j) row[terms[j].unknown] += terms[j].coeff;
        const double at = terms[i].time;
        i = j;
        double v = 0.0;
        for (std::size_t s = 0; s < residual[r][q].size(); ++s)
          if (std::abs(residual[r][q][s].time - at) <= tol.time_match) {
            v += residual[r][q][s].coeff;
            used[s] = 1;
          }
        if (row.norm() > ctx.floor || std::abs(v) > ctx.floor) push(row, v);
      }
      if (!residual[r][q].empty() && !used[0])
        throw Error(Errc::InconsistentArrivals, "earliest echo above item " + std::to_string(it.label) +
                                                    " is not a reflection at one vertex");
    }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-9);
  if (A.rows() < 4 || qr.rank() < 4)
    throw Error(Errc::DegenerateLeafData, "echoes above item " + std::to_string(it.label) +
                                              " within the exact horizon do not determine its reflection");
  const Eigen::Vector4d x = qr.solve(y);
  e.residual = y.norm() > 0.0 ? (A * x - y).norm() / y.norm() : 0.0;
  e.rho << x[0], x[1], x[2], x[3];
  return e;
}

std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

std::string label_text(VertexId id) { return id < 0 ? "v" + std::to_string(-id) : std::to_string(id); }

/// Message of an error without its code prefix.
std::string bare(const Error& e) {
  const std::string what = e.what(), code = to_string(e.code());
  return what.rfind(code + ": ", 0) == 0 ? what.substr(code.size() + 2) : what;
}

bool is_clamp(const Mat2& rho, double tol) { return (rho + Mat2::Identity()).norm() <= tol; }

struct Candidate {
  std::vector<std::size_t> members;
  double key = 0.0;
};

}  // namespace

RecoveredTree recover_tree(const Measurement& data, const Tolerances& tol) {
  Context ctx{data, tol, 0.0, {}, 0.0};
  ctx.exact = data.response.exact_horizon > 0.0 ? data.response.exact_horizon : data.response.horizon;
  for (std::size_t i = 0; i < data.response.boundary.size(); ++i) ctx.pos[data.response.boundary[i]] = i;
  if (data.response.boundary.empty()) throw Error(Errc::EmptyGrouping, "measurement has no boundary sources");

  RecoveredTree out;
  State st;
  double kmin = kInf;

  // Stage 1: leaf edges from the diagonal time-domain blocks.
  for (std::size_t i = 0; i < data.response.boundary.size(); ++i) {
    const VertexId id = data.response.boundary[i];
    LeafReport rep;
    try {
      rep = extract_leaf_params(data.response.blocks[i][i], id, tol);
    } catch (const Error& e) {
      throw Error(e.code(), "stage 1 (time-domain leaf extraction): " + bare(e));
    }
    out.leaves.push_back(rep);
    kmin = std::min({kmin, rep.k1, rep.k2});
    st.nodes.push_back({true, id});
    REdge e;
    e.bottom = static_cast<int>(st.nodes.size()) - 1;
    e.length = rep.length;
    e.k1 = rep.k1;
    e.k2 = rep.k2;
    e.prov.length_stage = e.prov.speed_stage = "time-domain";
    st.edges.push_back(e);
    Item it;
    it.label = id;
    it.edge = static_cast<int>(st.edges.size()) - 1;
    it.report = rep;
    it.rep = id;
    it.leaves = {id};
    st.items.push_back(it);
    std::ostringstream os;
    os << "stage 1: leaf " << id << " l=" << rep.length << " k=(" << rep.k1 << ", " << rep.k2 << ") a=" << rep.a
       << " b=" << rep.b << " a~=" << rep.a_t << " b~=" << rep.b_t << " support=" << rep.support;
    out.log.push_back(os.str());
  }
  ctx.floor = tol.spike_floor / kmin;

  ReducedTW tw = initial_reduced_tw(data.tw);
  int level = 0;
  VertexId next_virtual = -1;

  while (true) {
    if (st.items.size() == 1 && is_clamp(st.items[0].report.reflection(), 1e3 * tol.echo)) break;

    // Sibling relation from reduced first arrivals.
    const std::size_t n = st.items.size();
    std::vector<LeafReport> reports;
    for (const Item& it : st.items) reports.push_back(it.report);
    Eigen::MatrixXd tau = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), kInf);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double t = detail::first_arrival(ctx.measured(st.items[i].rep, st.items[j].rep, 0, 0), ctx.floor, ctx.exact);
        tau(i, j) = t - st.items[i].offset - st.items[j].offset;
      }
    std::vector<std::vector<std::size_t>> groups;
    try {
      groups = detect_siblings(reports, tau, tol.sibling);
    } catch (const Error& e) {
      throw Error(e.code(), "peel level " + std::to_string(level + 1) + " (sibling detection): " + bare(e));
    }
    std::vector<Candidate> cands;
    for (const auto& g : groups) {
      Candidate c{g, 0.0};
      for (std::size_t a : g)
        for (std::size_t b : g)
          if (a != b) c.key = std::max(c.key, tau(a, b));
      if (g.size() == 1) c.key = kInf;
      cands.push_back(c);
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.key < b.key; });

    bool progressed = false;
    std::vector<std::string> deferred;
    for (const Candidate& cand : cands) {
      State trial = st;
      try {
        std::vector<LeafReport> group;
        for (std::size_t m : cand.members) group.push_back(trial.items[m].report);
        StarSolution star = solve_star(group, tol);

        for (std::size_t m : cand.members) {
          Item& it = trial.items[m];
          if (!it.transfer.ready) it.transfer = compute_transfer(trial, it, it.report.length, ctx);
        }

        // Direction signs from the first transmitted spikes between members.
        const Item& i0 = trial.items[cand.members[0]];
        const Mat2 scatter0 = Mat2::Identity() + i0.report.reflection();
        for (std::size_t k = 1; k < cand.members.size(); ++k) {
          const Item& ik = trial.items[cand.members[k]];
          const Mat2 T = rotation_matrix(-star.phi[k]) * scatter0;
          std::vector<double> pred, meas;
          for (int r = 0; r < kChannels; ++r)
            for (int q = 0; q < kChannels; ++q) {
              std::vector<double> times;
              for (int c = 0; c < kChannels; ++c)
                for (int cc = 0; cc < kChannels; ++cc) times.push_back(i0.transfer.t_up[r][c] + ik.transfer.t_dn[cc][q]);
              const auto uniq = sorted_unique(times);
              for (int c = 0; c < kChannels; ++c)
                for (int cc = 0; cc < kChannels; ++cc) {
                  const double t = i0.transfer.t_up[r][c] + ik.transfer.t_dn[cc][q];
                  if (!(t <= ctx.exact)) continue;
                  const auto close = std::count_if(uniq.begin(), uniq.end(), [&](double u) {
                    return std::abs(u - t) <= 10.0 * tol.time_match;
                  });
                  if (close > 1) continue;
                  pred.push_back(ik.transfer.sig[cc][q] * T(cc, c) * i0.transfer.a_up[r][c]);
                  meas.push_back(coeff_near(ctx.measured(i0.rep, ik.rep, r, q), t, tol.time_match));
                }
            }
          if (pred.empty() || star.isotropic[k]) continue;
          const SignResolution sr = resolve_angle_sign(star.phi[k], pred, meas, tol.sign);
          if (sr.resolved) {
            star.phi[k] = sr.alpha;
            star.resolved[k] = 1;
          }
        }

        // New internal vertex and the virtual parent edge.
        const int v = static_cast<int>(trial.nodes.size());
        trial.nodes.push_back({false, kModelInternal + v});
        for (std::size_t k = 0; k < cand.members.size(); ++k) {
          REdge& e = trial.edges[trial.items[cand.members[k]].edge];
          e.top = v;
          e.phi_top = star.phi[k];
          e.prov.angle_stage = "peel-level-" + std::to_string(level + 1);
        }
        REdge pe;
        pe.bottom = v;
        pe.k1 = star.parent_k1;
        pe.k2 = star.parent_k2;
        pe.phi_bottom = star.parent_isotropic ? 0.0 : star.phi_parent;
        pe.prov.speed_stage = pe.prov.length_stage = "peel-level-" + std::to_string(level + 1);
        pe.prov.speed_residual = star.parent_spread;
        trial.edges.push_back(pe);

        // Reduced TW and continuity-based signs.
        PeelLevel pl;
        pl.level = level + 1;
        pl.virtual_id = next_virtual;
        std::vector<PeelMember> pm;
        for (std::size_t m : cand.members) {
          const Item& it = trial.items[m];
          pm.push_back({it.label, it.report.length, it.report.k1, it.report.k2});
          pl.group.push_back(it.label);
        }
        PeelResult peeled;
        bool have_tw = tw.retained_count() > 0;
        if (have_tw) {
          peeled = peel_tw(tw, pm, star, next_virtual, tol);
          for (std::size_t k = 0; k < cand.members.size(); ++k)
            trial.edges[trial.items[cand.members[k]].edge].phi_top = star.phi[k];
        }

        Item np;
        np.label = next_virtual;
        np.edge = static_cast<int>(trial.edges.size()) - 1;
        std::size_t best = cand.members[0];
        for (std::size_t m : cand.members) {
          const Item& it = trial.items[m];
          const double u = it.offset + it.report.length / it.report.k1;
          const Item& b = trial.items[best];
          if (u < b.offset + b.report.length / b.report.k1) best = m;
          np.leaves.insert(np.leaves.end(), it.leaves.begin(), it.leaves.end());
          np.edges_below += it.edges_below + 1;
        }
        np.rep = trial.items[best].rep;
        np.offset = trial.items[best].offset + trial.items[best].report.length / trial.items[best].report.k1;
        const Transfer tr = compute_transfer(trial, np, kPlaceholder, ctx);
        const Echo echo = extract_echo(np, tr, star.parent_k1, star.parent_k2, ctx);
        if (echo.support < 2 || echo.residual > tol.echo)
          throw Error(Errc::InconsistentArrivals, "echo of the would-be parent edge does not fit one edge (support " +
                                                      std::to_string(echo.support) + ", residual " +
                                                      std::to_string(echo.residual) + ")");
        np.report.boundary = np.label;
        np.report.k1 = star.parent_k1;
        np.report.k2 = star.parent_k2;
        np.report.length = echo.length;
        np.report.a = echo.rho(0, 0);
        np.report.b = echo.rho(1, 0);
        np.report.b_t = echo.rho(0, 1);
        np.report.a_t = echo.rho(1, 1);
        np.report.residual = echo.residual;
        np.report.support = echo.support;
        np.transfer = relength(tr, star.parent_k1, star.parent_k2, echo.length);
        trial.edges[np.edge].length = echo.length;

        pl.star_residual = *std::max_element(star.A_residual.begin(), star.A_residual.end());
        pl.eigen_mismatch = star.eigen_mismatch;
        pl.echo_residual = echo.residual;
        if (have_tw) {
          pl.continuity_residual = peeled.continuity_residual;
          pl.retained = peeled.tw.retained_count();
          try {
            const TWExtraction ex = extract_from_tw(peeled.tw, next_virtual, star.parent_k1, star.parent_k2, tol);
            pl.tw_length = ex.report.length;
            trial.edges[np.edge].prov.length_residual = std::abs(ex.report.length - echo.length) / echo.length;
          } catch (const Error& err) {
            out.log.push_back(std::string("level ") + std::to_string(level + 1) + ": TW cross-check unavailable (" +
                              to_string(err.code()) + ")");
          }
        }

        // Commit.
        std::vector<Item> items;
        for (std::size_t i = 0; i < trial.items.size(); ++i)
          if (std::find(cand.members.begin(), cand.members.end(), i) == cand.members.end())
            items.push_back(std::move(trial.items[i]));
        items.push_back(std::move(np));
        trial.items = std::move(items);
        for (const Item& it : trial.items) {
          pl.boundary_after.push_back(it.label);
          if (it.label < 0) {
            pl.leaves_below[it.label] = it.leaves;
            pl.edges_below[it.label] = it.edges_below;
          }
        }
        if (have_tw) {
          tw = std::move(peeled.tw);
          pl.tw = tw;
        }
        for (std::size_t k = 0; k < cand.members.size(); ++k) {
          if (star.isotropic[k]) out.flags.push_back("IsotropicAmbiguity: direction of " + label_text(star.group[k]));
          else if (!star.resolved[k])
            out.flags.push_back("UnresolvedSign: direction of " + label_text(star.group[k]) + " known mod pi");
        }
        if (star.parent_isotropic)
          out.flags.push_back("IsotropicAmbiguity: direction of the parent edge above " + label_text(next_virtual));
        std::ostringstream os;
        os << "level " << level + 1 << ": group {";
        for (std::size_t k = 0; k < pl.group.size(); ++k) os << (k ? ", " : "") << label_text(pl.group[k]);
        os << "} -> " << label_text(next_virtual) << " k=(" << star.parent_k1 << ", " << star.parent_k2
           << ") l=" << echo.length << " eigen=" << star.eigen_mismatch << " echo=" << echo.residual
           << " support=" << echo.support;
        if (have_tw) os << " tw_l=" << pl.tw_length << " retained=" << pl.retained;
        out.log.push_back(os.str());
        out.stars.push_back(star);
        out.levels.push_back(std::move(pl));
        st = std::move(trial);
        ++level;
        --next_virtual;
        progressed = true;
        break;
      } catch (const Error& err) {
        std::ostringstream os;
        os << "deferred group {";
        for (std::size_t k = 0; k < cand.members.size(); ++k) os << (k ? ", " : "") << label_text(st.items[cand.members[k]].label);
        os << "}: " << err.what();
        deferred.push_back(os.str());
        out.log.push_back(os.str());
      }
    }
    if (!progressed) {
      std::string msg = "peel level " + std::to_string(level + 1) + ": no peelable group";
      for (const auto& d : deferred) msg += "\n  " + d;
      throw Error(Errc::NoPeelableGroup, msg);
    }
  }

  // The last item's edge ends at the root.
  const int root_node = static_cast<int>(st.nodes.size());
  st.nodes.push_back({false, data.root});
  REdge& last = st.edges[st.items[0].edge];
  last.top = root_node;

  // Assemble with the root edge along theta = 0.
  VertexId next_id = data.root;
  for (const RNode& nd : st.nodes)
    if (nd.leaf) next_id = std::max(next_id, nd.id);
  ++next_id;
  std::vector<VertexId> ids(st.nodes.size());
  for (std::size_t i = 0; i < st.nodes.size(); ++i)
    ids[i] = st.nodes[i].leaf || static_cast<int>(i) == root_node ? st.nodes[i].id : next_id++;
  TreeDescription d;
  d.root = data.root;
  d.vertices = ids;
  std::sort(d.vertices.begin(), d.vertices.end());
  d.boundary_order = data.boundary_order;
  std::vector<double> theta(st.edges.size(), 0.0);
  std::vector<int> stack{st.items[0].edge};
  theta[st.items[0].edge] = 0.0;
  while (!stack.empty()) {
    const int e = stack.back();
    stack.pop_back();
    const REdge& ed = st.edges[e];
    if (st.nodes[ed.bottom].leaf) continue;
    const double offset = theta[e] + kPi - ed.phi_bottom;
    for (std::size_t c = 0; c < st.edges.size(); ++c)
      if (st.edges[c].top == ed.bottom) {
        theta[c] = normalize_angle(st.edges[c].phi_top + offset);
        stack.push_back(static_cast<int>(c));
      }
  }
  std::vector<EdgeProvenance> prov;
  for (std::size_t e = 0; e < st.edges.size(); ++e) {
    const REdge& ed = st.edges[e];
    d.edges.push_back({static_cast<EdgeId>(e), ids[ed.top], ids[ed.bottom], ed.length, ed.k1, ed.k2, theta[e]});
    EdgeProvenance p = ed.prov;
    p.id = static_cast<EdgeId>(e);
    if (p.angle_stage.empty()) p.angle_stage = "root-frame";
    prov.push_back(p);
  }
  // Leaf directions are fixed mod 2pi relative to each other at their vertex.
  for (std::size_t s = 0; s < out.stars.size(); ++s) {
    const StarSolution& star = out.stars[s];
    for (std::size_t k = 0; k < star.group.size(); ++k) {
      if (star.group[k] < 0 || !star.resolved[k] || star.isotropic[k]) continue;
      for (std::size_t e = 0; e < st.edges.size(); ++e)
        if (st.nodes[st.edges[e].bottom].leaf && st.nodes[st.edges[e].bottom].id == star.group[k])
          prov[e].direction_resolved = true;
    }
  }
  out.tree = build_tree(d);
  out.provenance = std::move(prov);
  return out;
}

using json = nlohmann::ordered_json;

std::string serialize_recovered(const RecoveredTree& r) {
  json j = json::parse(serialize(r.tree));
  json prov = json::array();
  for (const EdgeProvenance& p : r.provenance)
    prov.push_back({{"edge", p.id},
                    {"length_stage", p.length_stage},
                    {"speed_stage", p.speed_stage},
                    {"angle_stage", p.angle_stage},
                    {"direction_resolved", p.direction_resolved},
                    {"length_residual", p.length_residual},
                    {"speed_residual", p.speed_residual}});
  j["provenance"] = prov;
  json levels = json::array();
  for (const PeelLevel& l : r.levels)
    levels.push_back({{"level", l.level},
                      {"group", l.group},
                      {"virtual", l.virtual_id},
                      {"star_residual", l.star_residual},
                      {"eigen_mismatch", l.eigen_mismatch},
                      {"echo_residual", l.echo_residual},
                      {"continuity_residual", l.continuity_residual},
                      {"tw_length", l.tw_length},
                      {"retained_samples", l.retained}});
  j["residuals"] = levels;
  j["flags"] = r.flags;
  return j.dump(1) + "\n";
}

MetricTree deserialize_recovered(const std::string& text, std::vector<EdgeId>* resolved) {
  MetricTree t = deserialize(text);
  if (resolved) {
    resolved->clear();
    const json j = json::parse(text);
    if (j.contains("provenance"))
      for (const json& p : j.at("provenance"))
        if (p.value("direction_resolved", false)) resolved->push_back(p.at("edge").get<EdgeId>());
  }
  return t;
}

std::string recovery_report(const RecoveredTree& r) {
  std::ostringstream os;
  os.precision(10);
  os << "recovered " << r.tree.edge_count() << " edges, " << r.levels.size() << " peel levels\n";
  for (const auto& line : r.log) os << line << "\n";
  os << "edges:\n";
  for (std::size_t e = 0; e < r.tree.edge_count(); ++e) {
    const Edge& ed = r.tree.edge(e);
    const EdgeProvenance& p = r.provenance[e];
    os << "  edge " << ed.id << " " << r.tree.vertex_id(ed.tail) << "->" << r.tree.vertex_id(ed.head)
       << " l=" << ed.length << " k=(" << ed.k1 << ", " << ed.k2 << ") theta=" << ed.theta << " [length "
       << p.length_stage << ", speeds " << p.speed_stage << ", angle " << p.angle_stage
       << (p.direction_resolved ? ", mod 2pi" : ", mod pi") << "]\n";
  }
  if (r.flags.empty()) os << "flags: none\n";
  for (const auto& f : r.flags) os << "flag: " << f << "\n";
  return os.str();
}

}  // namespace treewave
