#include "treewave/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace treewave {

namespace {

std::size_t unknown(std::size_t edge, int channel, int which) { return 4 * edge + 2 * channel + which; }

// Value and x-derivative (tail -> head parametrization) of the basis
// coefficients (A, B) at one end of an edge, for one channel.
struct EndBasis {
  double value_a, value_b, deriv_a, deriv_b;
};

EndBasis end_basis(const Edge& e, int channel, bool at_tail, double s) {
  const double k = e.speed(channel);
  const double decay = std::exp(-s * e.length / k);
  const double w = s / k;
  if (at_tail) return {1.0, decay, -w, w * decay};
  return {decay, 1.0, -w * decay, w};
}

}  // namespace

SpectralSystem::SpectralSystem(const MetricTree& tree, double s) : tree_(&tree), s_(s) {
  if (!(s > 0.0)) throw Error(Errc::InvalidArgument, "spectral parameter s must be positive");
  const std::size_t n = tree.edge_count();
  size_ = 4 * n;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(size_), static_cast<Eigen::Index>(size_));

  const auto bnd = tree.boundary();
  boundary_rows_.assign(bnd.size(), 0);
  double kmax = 0.0;
  for (const Edge& e : tree.edges()) kmax = std::max({kmax, e.k1, e.k2});
  const double force_scale = 1.0 / (s * kmax);

  std::size_t row = 0;
  for (std::size_t v = 0; v < tree.vertex_count(); ++v) {
    const auto inc = tree.incident(v);
    if (inc.size() == 1) {
      boundary_rows_[tree.boundary_position(v)] = row;
      const std::size_t e = inc[0];
      const bool tail = tree.edge(e).tail == v;
      for (int c = 0; c < kChannels; ++c) {
        const EndBasis b = end_basis(tree.edge(e), c, tail, s);
        a(row, unknown(e, c, 0)) = b.value_a;
        a(row, unknown(e, c, 1)) = b.value_b;
        ++row;
      }
      continue;
    }
    // Continuity of the global displacement R_theta (u, w) against the first edge.
    auto add_value = [&](std::size_t r, std::size_t e, double factor) {
      const Edge& ed = tree.edge(e);
      const Mat2 rot = rotation_matrix(ed.theta);
      const bool tail = ed.tail == v;
      for (int c = 0; c < kChannels; ++c) {
        const EndBasis b = end_basis(ed, c, tail, s);
        for (int d = 0; d < 2; ++d) {
          a(r + d, unknown(e, c, 0)) += factor * rot(d, c) * b.value_a;
          a(r + d, unknown(e, c, 1)) += factor * rot(d, c) * b.value_b;
        }
      }
    };
    for (std::size_t j = 1; j < inc.size(); ++j) {
      add_value(row, inc[0], 1.0);
      add_value(row, inc[j], -1.0);
      row += 2;
    }
    // Force balance: sum_e d_e R_theta D'_e r_x = 0, d_e = -1 when e starts at v.
    for (std::size_t e : inc) {
      const Edge& ed = tree.edge(e);
      const bool tail = ed.tail == v;
      const double orient = tail ? -1.0 : 1.0;
      const Mat2 rot = rotation_matrix(ed.theta);
      for (int c = 0; c < kChannels; ++c) {
        const double k = ed.speed(c);
        const EndBasis b = end_basis(ed, c, tail, s);
        for (int d = 0; d < 2; ++d) {
          const double f = force_scale * orient * rot(d, c) * k * k;
          a(row + d, unknown(e, c, 0)) += f * b.deriv_a;
          a(row + d, unknown(e, c, 1)) += f * b.deriv_b;
        }
      }
    }
    row += 2;
  }
  if (row != size_) throw Error(Errc::InvalidArgument, "equation count does not match unknown count");

  lu_.compute(a);
  rcond_ = lu_.rcond();
  if (!(rcond_ > 1e-15)) {
    throw Error(Errc::IllConditioned, "spectral system at s=" + std::to_string(s) +
                                          " has rcond " + std::to_string(rcond_));
  }
}

std::vector<Vec2> SpectralSystem::dirichlet_to_neumann(const std::vector<Vec2>& values) const {
  const MetricTree& tree = *tree_;
  const auto bnd = tree.boundary();
  if (values.size() != bnd.size()) throw Error(Errc::InvalidArgument, "one Dirichlet value per boundary vertex");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size_));
  for (std::size_t j = 0; j < bnd.size(); ++j) {
    const std::size_t e = tree.incident(bnd[j])[0];
    const double sign = tree.away_sign(bnd[j], e);
    rhs(boundary_rows_[j]) = sign * values[j][0];
    rhs(boundary_rows_[j] + 1) = sign * values[j][1];
  }
  const Eigen::VectorXd x = lu_.solve(rhs);
  std::vector<Vec2> derivs(bnd.size());
  for (std::size_t j = 0; j < bnd.size(); ++j) {
    const std::size_t e = tree.incident(bnd[j])[0];
    const bool tail = tree.edge(e).tail == bnd[j];
    // The away-frame derivative equals the parametrized x-derivative at either end.
    for (int c = 0; c < kChannels; ++c) {
      const EndBasis b = end_basis(tree.edge(e), c, tail, s_);
      derivs[j][c] = b.deriv_a * x(unknown(e, c, 0)) + b.deriv_b * x(unknown(e, c, 1));
    }
  }
  return derivs;
}

std::vector<Vec2> tw_column(const MetricTree& tree, double s, std::size_t excited, int channel) {
  const SpectralSystem sys(tree, s);
  const auto bnd = tree.boundary();
  std::vector<Vec2> values(bnd.size(), Vec2::Zero());
  const std::size_t pos = tree.boundary_position(excited);
  if (pos + 1 == bnd.size()) throw Error(Errc::InvalidArgument, "the root is never excited");
  values[pos][channel] = 1.0;
  auto d = sys.dirichlet_to_neumann(values);
  d.pop_back();
  return d;
}

TWSample tw_matrix(const MetricTree& tree, double s) {
  const SpectralSystem sys(tree, s);
  const auto bnd = tree.boundary();
  const std::size_t m = bnd.size() - 1;
  TWSample out;
  out.s = s;
  out.rcond = sys.rcond();
  for (std::size_t i = 0; i < m; ++i) out.boundary.push_back(tree.vertex_id(bnd[i]));
  out.blocks.assign(m, std::vector<Mat2>(m, Mat2::Zero()));
  std::vector<Vec2> values(bnd.size(), Vec2::Zero());
  for (std::size_t i = 0; i < m; ++i)
    for (int r = 0; r < kChannels; ++r) {
      std::fill(values.begin(), values.end(), Vec2::Zero());
      values[i][r] = 1.0;
      const auto d = sys.dirichlet_to_neumann(values);
      for (std::size_t j = 0; j < m; ++j) out.blocks[i][j].row(r) = d[j].transpose();
    }
  return out;
}

std::vector<TWSample> tw_samples(const MetricTree& tree, const std::vector<double>& s_grid, unsigned threads) {
  for (std::size_t i = 0; i < s_grid.size(); ++i) {
    if (!(s_grid[i] > 0.0)) throw Error(Errc::InvalidArgument, "s grid must be positive");
    if (i > 0 && !(s_grid[i] > s_grid[i - 1])) throw Error(Errc::InvalidArgument, "s grid must be increasing");
  }
  std::vector<TWSample> out(s_grid.size());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(s_grid.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < s_grid.size(); ++i) out[i] = tw_matrix(tree, s_grid[i]);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < s_grid.size(); i += threads) out[i] = tw_matrix(tree, s_grid[i]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double single_edge_tw(double k, double l, double s) { return -(s / k) / std::tanh(s * l / k); }

SGridSpec default_s_grid(const MetricTree& tree, int count) {
  SGridSpec g;
  g.min = 2.0 / optical_diameter(tree);
  g.max = 30.0 / min_edge_time(tree);
  g.count = count;
  g.logarithmic = true;
  return g;
}

std::vector<double> make_s_grid(const SGridSpec& spec) {
  if (!(spec.min > 0.0) || !(spec.max > spec.min) || spec.count < 2)
    throw Error(Errc::InvalidArgument, "s grid needs 0 < min < max and count >= 2");
  std::vector<double> grid(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    const double f = static_cast<double>(i) / (spec.count - 1);
    grid[static_cast<std::size_t>(i)] = spec.logarithmic ? spec.min * std::pow(spec.max / spec.min, f)
                                                         : spec.min + f * (spec.max - spec.min);
  }
  grid.back() = spec.max;
  return grid;
}

}  // namespace treewave
