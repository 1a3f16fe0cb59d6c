#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "treewave/wavefront.hpp"

using namespace treewave;
using namespace treewave::test;

namespace {

std::size_t slot(const VertexScatter& vs, std::size_t edge) {
  return static_cast<std::size_t>(std::find(vs.edges.begin(), vs.edges.end(), edge) - vs.edges.begin());
}

// Spikes of a train with |coeff| above the floor.
SpikeTrain significant(const SpikeTrain& train, double floor = 1e-13) {
  SpikeTrain out;
  for (const Spike& s : train)
    if (std::abs(s.coeff) > floor) out.push_back(s);
  return out;
}

}  // namespace

TEST_CASE("transparent degree-2 junction") {
  for (double theta : {0.0, 0.7, 2.9}) {
    const MetricTree t = chain({{1, 1, 1, 0.2}, {1, 1, 1, theta}});
    const ScatterTable table = precompute_scatter(t);
    const std::size_t v = t.vertex_index(1);
    const VertexScatter& vs = table.vertices[v];
    const std::size_t i = slot(vs, 0), j = slot(vs, 1);
    CHECK(max_abs(vs.out[i][i]) < 1e-15);
    CHECK(max_abs(vs.out[i][j] - rotation_matrix(angle_between(t, v, 1, 0))) < 1e-15);
  }
}

TEST_CASE("clamped leaf reflects with -I") {
  const MetricTree t = chain({{1, 1.3, 0.7, 0.2}, {1, 1.1, 0.6, 1.0}});
  const ScatterTable table = precompute_scatter(t);
  for (std::size_t v : t.boundary()) CHECK(max_abs(table.vertices[v].out[0][0] + Mat2::Identity()) == 0.0);
}

TEST_CASE("degree-2 vertex against a direct continuity and force-balance solve") {
  // D_1 = diag(2,1), D_2 = diag(3,1), alpha_12 = pi/6 at vertex 1.
  const MetricTree t = chain({{1, 2, 1, 0.0}, {1, 3, 1, kPi + kPi / 6}});
  const std::size_t v = t.vertex_index(1);
  const double alpha = angle_between(t, v, 0, 1);
  CHECK(std::abs(angle_distance(alpha, kPi / 6, 2 * kPi)) < 1e-14);

  // Unknowns: reflected r (edge 1 frame), transmitted q (edge 2 frame).
  // p + r = R q (continuity), D_1 (p - r) = R D_2 q (force balance).
  const Mat2 R = rotation_matrix(alpha);
  const Mat2 D1 = Vec2(2, 1).asDiagonal(), D2 = Vec2(3, 1).asDiagonal();
  Eigen::Matrix4d A;
  A << Mat2::Identity(), -R, D1, R * D2;
  const Vec2 p(1, 0);
  Eigen::Vector4d rhs;
  rhs << -p, D1 * p;
  const Eigen::Vector4d x = A.fullPivLu().solve(rhs);

  const ScatterTable table = precompute_scatter(t);
  const VertexScatter& vs = table.vertices[v];
  const std::size_t i = slot(vs, 0), j = slot(vs, 1);
  CHECK((vs.out[i][i] * p - x.head<2>()).norm() < 1e-14);
  CHECK((vs.out[i][j] * p - x.tail<2>()).norm() < 1e-14);
  CHECK(energy_flux_defect(t, table) < 1e-14);
}

TEST_CASE("energy flux conservation on random trees") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const MetricTree t = random_tree(seed, 12);
    CHECK(energy_flux_defect(t, precompute_scatter(t)) < 1e-12);
  }
}

TEST_CASE("single edge matches the method of images") {
  const double l = 1.3, k1 = 1.0, k2 = 0.5;
  const MetricTree t = chain({{l, k1, k2, 0.4}});
  SimulationOptions opt;
  opt.horizon = 20.0;
  for (int ch = 0; ch < 2; ++ch) {
    const double k = ch == 0 ? k1 : k2;
    const ResponseRow row = simulate_source(t, t.boundary()[0], ch, opt);
    const SpikeTrain& train = row.receivers[0][ch];
    const int images = static_cast<int>(std::floor(opt.horizon / (2 * l / k)));
    REQUIRE(train.size() == static_cast<std::size_t>(images + 1));
    CHECK(train[0].time == 0.0);
    CHECK(train[0].coeff == doctest::Approx(-1.0 / k).epsilon(1e-15));
    for (int n = 1; n <= images; ++n) {
      CHECK(train[n].time == doctest::Approx(2 * n * l / k).epsilon(1e-14));
      CHECK(train[n].coeff == doctest::Approx(-2.0 / k).epsilon(1e-14));
    }
    CHECK(row.receivers[0][1 - ch].empty());
  }
}

TEST_CASE("transparent two-edge junction has no junction echo") {
  const MetricTree t = chain({{1, 1, 1, 0.0}, {1, 1, 1, 1.2}});
  SimulationOptions opt;
  opt.horizon = 5.0;
  const ResponseRow row = simulate_source(t, t.boundary()[0], 0, opt);
  const SpikeTrain diag = significant(row.receivers[0][0]);
  REQUIRE(diag.size() == 2);
  CHECK(diag[1].time == doctest::Approx(4.0));
  CHECK(significant(row.receivers[0][1]).empty());
}

TEST_CASE("cross-channel diagonal entry starts at l/k1 + l/k2") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentConfig c;
    c.seed = seed;
    c.shape = TreeShape::Star;
    c.edges = 4;
    const MetricTree t = generate_tree(c);
    SimulationOptions opt;
    opt.horizon = 1.5 * optical_diameter(t);
    const std::size_t b = t.boundary()[0];
    const Edge& e = t.edge(t.incident(b)[0]);
    const ResponseRow row = simulate_source(t, b, 0, opt);
    const Spike* first = first_spike(row.receivers[0][1], 1e-14);
    REQUIRE(first != nullptr);
    CHECK(first->time == doctest::Approx(e.length / e.k1 + e.length / e.k2).epsilon(1e-13));
  }
}

TEST_CASE("full_response shape and weighted reciprocity") {
  const MetricTree two = chain({{1, 1.2, 0.7, 0}, {0.8, 1.5, 0.9, 2}});
  SimulationOptions opt;
  opt.horizon = 2.5 * optical_diameter(two);
  const ResponseMatrix rm = full_response(two, opt, true);
  CHECK(rm.size() == 2);
  CHECK(rm.blocks.size() == 2);
  CHECK(rm.blocks[0].size() == 2);

  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const MetricTree t = random_tree(seed, 6, 3);
    opt.horizon = 1.5 * optical_diameter(t);
    const ResponseMatrix r = full_response(t, opt);
    const auto bnd = t.boundary();
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = 0; j < r.size(); ++j) {
        const Edge& ei = t.edge(t.incident(bnd[i])[0]);
        const Edge& ej = t.edge(t.incident(bnd[j])[0]);
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            // R_ij[a][b] k_jb^2 against R_ji[b][a] k_ia^2, spike by spike
            const SpikeTrain x = significant(r.blocks[i][j].entries[a][b], 1e-12);
            const SpikeTrain y = significant(r.blocks[j][i].entries[b][a], 1e-12);
            REQUIRE(x.size() == y.size());
            const double wx = ej.speed(b) * ej.speed(b), wy = ei.speed(a) * ei.speed(a);
            for (std::size_t n = 0; n < x.size(); ++n) {
              CHECK(x[n].time == doctest::Approx(y[n].time).epsilon(1e-12));
              worst = std::max(worst, std::abs(x[n].coeff * wx - y[n].coeff * wy));
              scale = std::max(scale, std::abs(x[n].coeff * wx));
            }
          }
      }
    CHECK(worst <= 1e-10 * scale);
  }
}

TEST_CASE("first arrivals equal channel travel times") {
  const MetricTree t = random_tree(5, 7, 3);
  SimulationOptions opt;
  opt.horizon = 1.1 * optical_diameter(t);
  const ResponseMatrix r = full_response(t, opt);
  const auto bnd = t.boundary();
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (i == j) continue;
      for (int c = 0; c < 2; ++c) {
        const Spike* s = first_spike(r.blocks[i][j].entries[c][c], 1e-14);
        REQUIRE(s != nullptr);
        CHECK(s->time >= channel_travel_time(t, bnd[i], bnd[j], 0) - 1e-12);
      }
      const Spike* s = first_spike(r.blocks[i][j].entries[0][0], 1e-14);
      CHECK(s->time == doctest::Approx(channel_travel_time(t, bnd[i], bnd[j], 0)).epsilon(1e-12));
    }
}

TEST_CASE("short horizon warning") {
  const MetricTree t = random_tree(2, 5, 3);
  SimulationOptions opt;
  opt.horizon = 1.5 * optical_diameter(t);
  CHECK(simulate_source(t, t.boundary()[0], 0, opt).short_horizon);
  opt.horizon = 2.1 * optical_diameter(t);
  CHECK_FALSE(simulate_source(t, t.boundary()[0], 0, opt).short_horizon);
}

TEST_CASE("merge_spikes") {
  const SpikeTrain cancel{{1, 1.0, 2.0}, {1, 1.0 + 1e-15, -2.0}};
  CHECK(merge_spikes(cancel, 1e-12).empty());
  const SpikeTrain disjoint{{1, 0.5, 1.0}, {1, 1.5, -3.0}, {0, 2.0, 0.25}};
  const SpikeTrain m = merge_spikes(disjoint, 1e-12);
  REQUIRE(m.size() == 3);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(m[n].time == disjoint[n].time);
    CHECK(m[n].coeff == disjoint[n].coeff);
  }
  const SpikeTrain close{{1, 1.0, 1.0}, {1, 1.0 + 1e-13, 3.0}};
  const SpikeTrain c = merge_spikes(close, 1e-12);
  REQUIRE(c.size() == 1);
  CHECK(c[0].coeff == 4.0);
  CHECK(c[0].time == doctest::Approx(1.0 + 0.75e-13).epsilon(1e-15));
}

TEST_CASE("simulator trains are strictly increasing in time") {
  const MetricTree t = random_tree(4, 8);
  SimulationOptions opt;
  opt.horizon = 2.0 * optical_diameter(t);
  const ResponseMatrix r = full_response(t, opt);
  for (const auto& row : r.blocks)
    for (const ResponseBlock& b : row)
      for (const auto& e : b.entries)
        for (const SpikeTrain& train : e)
          for (std::size_t n = 1; n < train.size(); ++n) CHECK(train[n].time > train[n - 1].time);
}

TEST_CASE("laplace_of_spikes") {
  CHECK(laplace_of_spikes({}, 2.0) == 0.0);
  CHECK(laplace_of_spikes({{1, 0.3, 1.7}}, 2.0) == doctest::Approx(1.7 * 2.0 * std::exp(-0.6)));
  CHECK(laplace_of_spikes({{0, 0.3, 1.7}}, 2.0) == doctest::Approx(1.7 * std::exp(-0.6)));

  // -delta'(t) - 2 sum delta'(t - 2n), truncated at T, against -s coth(s)
  const double T = 12.0;
  SpikeTrain images{{1, 0.0, -1.0}};
  for (int n = 1; 2.0 * n <= T; ++n) images.push_back({1, 2.0 * n, -2.0});
  for (double s : {0.5, 1.0, 3.0, 10.0}) {
    const double exact = -s / std::tanh(s);
    CHECK(std::abs(laplace_of_spikes(images, s) - exact) <= 4.0 * s * std::exp(-s * T) + 1e-14 * s);
  }
}

TEST_CASE("front budget keeps small trees exact and lumps large tails") {
  const MetricTree small = chain({{1, 1.2, 0.7, 0}, {0.8, 1.5, 0.9, 2}});
  SimulationOptions opt;
  opt.horizon = 2.5 * optical_diameter(small);
  opt.exact_horizon = 1.0 * optical_diameter(small);
  CHECK(simulate_source(small, small.boundary()[0], 0, opt).exact_until == opt.horizon);

  const MetricTree t = random_tree(6, 8);
  const double d = optical_diameter(t);
  SimulationOptions exact;
  exact.horizon = 2.0 * d;
  exact.exact_budget = 0;
  SimulationOptions lumped = exact;
  lumped.exact_horizon = 1.0 * d;
  lumped.exact_budget = 100;
  const ResponseRow a = simulate_source(t, t.boundary()[0], 0, exact);
  const ResponseRow b = simulate_source(t, t.boundary()[0], 0, lumped);
  CHECK(b.exact_until >= d);
  CHECK(b.exact_until < exact.horizon);
  CHECK(b.fronts_processed < a.fronts_processed);
  for (std::size_t j = 0; j < a.receivers.size(); ++j)
    for (int c = 0; c < 2; ++c) {
      SpikeTrain ea, eb;
      for (const Spike& s : a.receivers[j][c])
        if (s.time <= b.exact_until) ea.push_back(s);
      for (const Spike& s : b.receivers[j][c])
        if (s.time <= b.exact_until) eb.push_back(s);
      REQUIRE(ea.size() == eb.size());
      for (std::size_t n = 0; n < ea.size(); ++n) {
        CHECK(ea[n].time == eb[n].time);
        CHECK(ea[n].coeff == doctest::Approx(eb[n].coeff).epsilon(1e-12));
      }
      // Tail: the lumped train keeps the low-frequency content.
      const double s = 1.0 / d;
      CHECK(laplace_of_spikes(b.receivers[j][c], s) ==
            doctest::Approx(laplace_of_spikes(a.receivers[j][c], s)).epsilon(1e-3));
    }
}
