#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "treewave/spectral.hpp"
#include "treewave/wavefront.hpp"

using namespace treewave;
using namespace treewave::test;

TEST_CASE("single_edge_tw closed form") {
  CHECK(single_edge_tw(1, 1, 1) == doctest::Approx(-1.31304).epsilon(1e-5));
  CHECK(single_edge_tw(1, 1, 1) == doctest::Approx(-1.0 / std::tanh(1.0)).epsilon(1e-15));
  CHECK(single_edge_tw(1.7, 0.9, 40.0) == doctest::Approx(-40.0 / 1.7).epsilon(1e-12));
  for (double s : {0.3, 2.0, 7.5})
    CHECK(single_edge_tw(1.3, 0.8, s) == doctest::Approx(-(s / 1.3) / std::tanh(s * 0.8 / 1.3)).epsilon(1e-15));
}

TEST_CASE("tw_column on one edge") {
  const MetricTree t = chain({{1, 1, 0.6, 0.3}});
  const auto col = tw_column(t, 1.0, t.boundary()[0], 0);
  REQUIRE(col.size() == 1);
  CHECK(col[0][0] == doctest::Approx(-1.0 / std::tanh(1.0)).epsilon(1e-14));
  CHECK(std::abs(col[0][1]) < 1e-15);
  for (double s = 1.0; s <= 50.0; s += 0.5) {
    const auto c1 = tw_column(t, s, t.boundary()[0], 1);
    CHECK(std::abs(c1[0][1] - single_edge_tw(0.6, 1.0, s)) <= 1e-12 * std::abs(single_edge_tw(0.6, 1.0, s)));
  }
}

TEST_CASE("transparent junction equals one edge of summed length") {
  const double theta = 0.9;
  const MetricTree two = chain({{0.7, 1.4, 0.6, theta}, {0.5, 1.4, 0.6, theta}});
  for (double s : {0.5, 2.0, 9.0}) {
    const TWSample m = tw_matrix(two, s);
    CHECK(m.blocks[0][0](0, 0) == doctest::Approx(single_edge_tw(1.4, 1.2, s)).epsilon(1e-13));
    CHECK(m.blocks[0][0](1, 1) == doctest::Approx(single_edge_tw(0.6, 1.2, s)).epsilon(1e-13));
    CHECK(std::abs(m.blocks[0][0](0, 1)) < 1e-13 * s);
  }
}

TEST_CASE("equation count is 4N") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const MetricTree t = random_tree(seed, 3 + 2 * static_cast<int>(seed));
    CHECK(SpectralSystem(t, 1.0).equation_count() == 4 * t.edge_count());
  }
}

TEST_CASE("stiffness-weighted block symmetry") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const MetricTree t = random_tree(seed, 10);
    const auto bnd = t.boundary();
    for (double s : {0.4, 3.0, 20.0}) {
      const TWSample m = tw_matrix(t, s);
      double worst = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m.size(); ++j) {
          const Mat2 Di = t.edge(t.incident(bnd[i])[0]).stiffness();
          const Mat2 Dj = t.edge(t.incident(bnd[j])[0]).stiffness();
          worst = std::max(worst, max_abs(m.blocks[i][j] * Dj - (m.blocks[j][i] * Di).transpose()));
          scale = std::max(scale, max_abs(m.blocks[i][j] * Dj));
        }
      CHECK(worst <= 1e-10 * scale);
    }
  }
}

TEST_CASE("diagonal asymptote -s diag(1/k1, 1/k2)") {
  const MetricTree t = random_tree(3, 8);
  const double s = 60.0 / min_edge_time(t);
  const TWSample m = tw_matrix(t, s);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Edge& e = t.edge(t.incident(t.boundary()[i])[0]);
    CHECK(e.k1 * m.blocks[i][i](0, 0) / -s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.k2 * m.blocks[i][i](1, 1) / -s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("s grid and samples") {
  const MetricTree t = random_tree(2, 9);
  const SGridSpec spec = default_s_grid(t, 24);
  CHECK(spec.min == doctest::Approx(2.0 / optical_diameter(t)));
  const std::vector<double> grid = make_s_grid(spec);
  REQUIRE(grid.size() == 24);
  for (std::size_t n = 1; n < grid.size(); ++n) CHECK(grid[n] > grid[n - 1]);
  CHECK(make_s_grid({1.0, 3.0, 3, false}) == std::vector<double>{1.0, 2.0, 3.0});

  const auto serial = tw_samples(t, grid, 1);
  const auto parallel = tw_samples(t, grid, 4);
  REQUIRE(serial.size() == grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const TWSample direct = tw_matrix(t, grid[n]);
    CHECK(serial[n].s == grid[n]);
    for (std::size_t i = 0; i < direct.size(); ++i)
      for (std::size_t j = 0; j < direct.size(); ++j) {
        CHECK(serial[n].blocks[i][j] == direct.blocks[i][j]);
        CHECK(parallel[n].blocks[i][j] == direct.blocks[i][j]);
      }
  }
}

TEST_CASE("TW entries agree with the Laplace transform of the response") {
  // Fully exact simulation of a small tree.
  const MetricTree t = random_tree(11, 4, 2);
  const double d = optical_diameter(t);
  SimulationOptions opt;
  opt.horizon = 6.0 * d;
  opt.exact_budget = 0;
  const ResponseMatrix r = full_response(t, opt);
  for (double s : {1.5 / d, 3.0 / d, 8.0 / d}) {
    const TWSample m = tw_matrix(t, s);
    const double bound = 10.0 * s * std::exp(-s * (opt.horizon - d));
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = 0; j < m.size(); ++j)
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            const double lap = laplace_of_spikes(r.blocks[i][j].entries[a][b], s);
            const double floor = 1e-13 * (std::abs(lap) + std::abs(m.blocks[i][j](a, b)));
            CHECK(std::abs(lap - m.blocks[i][j](a, b)) <= std::max(bound, floor));
          }
  }
}
