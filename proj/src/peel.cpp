#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "treewave/inverse.hpp"

namespace treewave {

std::size_t ReducedTW::retained_count() const {
  return static_cast<std::size_t>(std::count(retained.begin(), retained.end(), 1));
}

ReducedTW initial_reduced_tw(const std::vector<TWSample>& samples) {
  ReducedTW r;
  if (!samples.empty()) r.boundary = samples.front().boundary;
  r.samples = samples;
  r.error.assign(samples.size(), std::numeric_limits<double>::epsilon());
  r.retained.assign(samples.size(), 1);
  return r;
}

namespace {

std::size_t position(const std::vector<VertexId>& ids, VertexId id) {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw Error(Errc::InvalidArgument, "label " + std::to_string(id) + " not in the boundary");
  return static_cast<std::size_t>(it - ids.begin());
}

/// Cauchy data carried from a boundary vertex across its edge to the inner
/// vertex, returned in the frame pointing away from the inner vertex.
struct Carried {
  Vec2 value, deriv;
};

Carried carry(const PeelMember& m, double s, const Vec2& zeta, const Vec2& d) {
  Carried out;
  for (int c = 0; c < kChannels; ++c) {
    const double k = c == 0 ? m.k1 : m.k2;
    const double x = s * m.length / k;
    const double ch = std::cosh(x), sh = std::sinh(x);
    out.value[c] = -(ch * zeta[c] + (k / s) * sh * d[c]);
    out.deriv[c] = (s / k) * sh * zeta[c] + ch * d[c];
  }
  return out;
}

}  // namespace

PeelResult peel_tw(const ReducedTW& tw, const std::vector<PeelMember>& group, StarSolution& star,
                   VertexId virtual_id, const Tolerances& tol) {
  const std::size_t n = group.size();
  if (n == 0 || star.phi.size() != n) throw Error(Errc::InvalidArgument, "peel group does not match the star");
  std::vector<std::size_t> gpos, opos;
  for (const PeelMember& m : group) gpos.push_back(position(tw.boundary, m.boundary));
  for (std::size_t i = 0; i < tw.boundary.size(); ++i)
    if (std::find(gpos.begin(), gpos.end(), i) == gpos.end()) opos.push_back(i);

  const double phi_p = std::isnan(star.phi_parent) ? 0.0 : star.phi_parent;
  const Mat2 Dp2 = Vec2(star.parent_k1 * star.parent_k1, star.parent_k2 * star.parent_k2).asDiagonal();
  const Mat2 to_parent = rotation_matrix(-phi_p);

  PeelResult res;
  res.flipped.assign(n, 0);
  for (std::size_t i : opos) res.tw.boundary.push_back(tw.boundary[i]);
  res.tw.boundary.push_back(virtual_id);
  const std::size_t m2 = res.tw.boundary.size();

  auto amplification = [&](double s) {
    double worst = 0.0;
    for (const PeelMember& m : group) worst = std::max(worst, 2.0 * s * m.length / std::min(m.k1, m.k2));
    return worst;
  };

  // Member values at the inner vertex for one excitation, in member frames.
  auto member_values = [&](const TWSample& smp, std::size_t src, int r, bool src_in_group,
                           std::vector<Carried>& out) {
    out.clear();
    for (std::size_t g = 0; g < n; ++g) {
      Vec2 zeta = Vec2::Zero();
      if (src_in_group && gpos[g] == src) zeta[r] = 1.0;
      const Vec2 d = smp.blocks[src][gpos[g]].row(r).transpose();
      out.push_back(carry(group[g], smp.s, zeta, d));
    }
  };

  // Fix the direction of members without a resolved sign from the best sample.
  {
    std::size_t best = tw.samples.size();
    for (std::size_t k = 0; k < tw.samples.size(); ++k)
      if (tw.retained[k] && amplification(tw.samples[k].s) < 600.0 &&
          (best == tw.samples.size() ||
           tw.error[k] * std::exp(amplification(tw.samples[k].s)) <
               tw.error[best] * std::exp(amplification(tw.samples[best].s))))
        best = k;
    if (best < tw.samples.size()) {
      const TWSample& smp = tw.samples[best];
      std::vector<Carried> vals;
      for (std::size_t g = 1; g < n; ++g) {
        double same = 0.0, flipped = 0.0;
        for (std::size_t gi = 0; gi < n; ++gi)
          for (int r = 0; r < kChannels; ++r) {
            member_values(smp, gpos[gi], r, true, vals);
            const Vec2 u0 = vals[0].value, ug = rotation_matrix(star.phi[g]) * vals[g].value;
            same += (u0 - ug).squaredNorm();
            flipped += (u0 + ug).squaredNorm();
          }
        if (flipped < same) {
          if (star.resolved[g]) throw Error(Errc::FrameMismatch, "vertex continuity contradicts the resolved direction of member " +
                                                                    std::to_string(star.group[g]));
          star.phi[g] = normalize_angle(star.phi[g] + std::numbers::pi);
          res.flipped[g] = 1;
        }
        star.resolved[g] = 1;
      }
    }
  }

  std::vector<Carried> vals;
  auto vertex_state = [&](std::vector<Carried>& v, Vec2& up, Vec2& dp, double& cont) {
    Vec2 u0 = Vec2::Zero();
    Vec2 force = Vec2::Zero();
    for (std::size_t g = 0; g < n; ++g) {
      const Mat2 rg = rotation_matrix(star.phi[g]);
      const PeelMember& m = group[g];
      const Vec2 dd(m.k1 * m.k1 * v[g].deriv[0], m.k2 * m.k2 * v[g].deriv[1]);
      u0 += rg * v[g].value;
      force += rg * dd;
    }
    u0 /= static_cast<double>(n);
    double scale = 0.0, mis = 0.0;
    for (std::size_t g = 0; g < n; ++g) {
      const Vec2 ug = rotation_matrix(star.phi[g]) * v[g].value;
      scale = std::max(scale, ug.norm());
      mis = std::max(mis, (ug - u0).norm());
    }
    cont = scale > 0.0 ? mis / scale : 0.0;
    up = to_parent * u0;
    dp = -(Dp2.inverse() * (to_parent * force));
  };

  for (std::size_t k = 0; k < tw.samples.size(); ++k) {
    const TWSample& smp = tw.samples[k];
    TWSample out;
    out.s = smp.s;
    out.rcond = smp.rcond;
    out.boundary = res.tw.boundary;
    out.blocks.assign(m2, std::vector<Mat2>(m2, Mat2::Zero()));
    const double amp = amplification(smp.s);
    double err = amp < 700.0 ? 4.0 * (tw.error[k] + std::numeric_limits<double>::epsilon()) * std::exp(amp)
                             : std::numeric_limits<double>::infinity();
    bool keep = tw.retained[k] && err <= tol.peel_error;
    if (keep) {
      Eigen::MatrixXd U(2, 2 * n), Dp(2, 2 * n);
      std::vector<Eigen::MatrixXd> Dj(opos.size(), Eigen::MatrixXd(2, 2 * n));
      double cont_worst = 0.0;
      for (std::size_t gi = 0; gi < n; ++gi)
        for (int r = 0; r < kChannels; ++r) {
          member_values(smp, gpos[gi], r, true, vals);
          Vec2 up, dp;
          double cont;
          vertex_state(vals, up, dp, cont);
          cont_worst = std::max(cont_worst, cont);
          const auto col = static_cast<Eigen::Index>(2 * gi + static_cast<std::size_t>(r));
          U.col(col) = up;
          Dp.col(col) = dp;
          for (std::size_t o = 0; o < opos.size(); ++o) Dj[o].col(col) = smp.blocks[gpos[gi]][opos[o]].row(r).transpose();
        }
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(U, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const auto sv = svd.singularValues();
      if (!(sv[1] > 1e-13 * sv[0])) {
        keep = false;
      } else {
        const Eigen::MatrixXd pinv = svd.solve(Eigen::MatrixXd::Identity(2, 2));  // U^+ (2n x 2)
        const Mat2 Mpp_t = Dp * pinv;
        out.blocks[m2 - 1][m2 - 1] = Mpp_t.transpose();
        std::vector<Mat2> Mpj_t(opos.size());
        for (std::size_t o = 0; o < opos.size(); ++o) {
          Mpj_t[o] = Dj[o] * pinv;
          out.blocks[m2 - 1][o] = Mpj_t[o].transpose();
        }
        // Excitations outside the group: the parent vertex sees value u_p.
        for (std::size_t o = 0; o < opos.size(); ++o)
          for (int r = 0; r < kChannels; ++r) {
            member_values(smp, opos[o], r, false, vals);
            Vec2 up, dp;
            double cont;
            vertex_state(vals, up, dp, cont);
            out.blocks[o][m2 - 1].row(r) = (dp - Mpp_t * up).transpose();
            for (std::size_t q = 0; q < opos.size(); ++q) {
              const Vec2 dj = smp.blocks[opos[o]][opos[q]].row(r).transpose();
              out.blocks[o][q].row(r) = (dj - Mpj_t[q] * up).transpose();
            }
          }
        res.continuity_residual = std::max(res.continuity_residual, cont_worst);
        err *= std::max(1.0, sv[0] / sv[1]);
        keep = err <= tol.peel_error;
      }
    }
    if (!keep) {
      for (auto& row : out.blocks)
        for (auto& b : row) b.setZero();
    }
    res.tw.samples.push_back(std::move(out));
    res.tw.error.push_back(err);
    res.tw.retained.push_back(keep ? 1 : 0);
  }
  return res;
}

TWExtraction extract_from_tw(const ReducedTW& tw, VertexId boundary, double k1, double k2, const Tolerances& tol) {
  const std::size_t p = position(tw.boundary, boundary);
  const double k[2] = {k1, k2};
  TWExtraction ex;
  ex.report.boundary = boundary;
  ex.report.k1 = k1;
  ex.report.k2 = k2;

  struct Point {
    double s;
    Mat2 G;
    double noise;
    std::size_t index;
  };
  std::vector<Point> pts;
  for (std::size_t i = 0; i < tw.samples.size(); ++i) {
    if (!tw.retained[i]) continue;
    const TWSample& smp = tw.samples[i];
    const Mat2 K = Vec2(smp.s / k1, smp.s / k2).asDiagonal();
    const Mat2 P = -(K.inverse() * smp.blocks[p][p].transpose());
    const Mat2 G = (Mat2::Identity() + P).inverse() * (Mat2::Identity() - P);
    pts.push_back({smp.s, G, std::max(1e-12, 1e3 * tw.error[i]), i});
  }

  // Per channel: log|G_cc| = log|rho_cc| - s * 2 l / k_c over the top third
  // of the samples still above the noise floor.
  auto regress = [&](auto value, std::vector<std::size_t>& window) -> std::pair<double, double> {
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (std::abs(value(pts[i])) > pts[i].noise) usable.push_back(i);
    if (usable.size() < 3) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
    const std::size_t take = std::max<std::size_t>(3, usable.size() / 3);
    window.assign(usable.end() - static_cast<std::ptrdiff_t>(take), usable.end());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i : window) {
      const double x = pts[i].s, y = std::log(std::abs(value(pts[i])));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double nw = static_cast<double>(window.size());
    const double slope = (nw * sxy - sx * sy) / (nw * sxx - sx * sx);
    return {-slope, (sy - slope * sx) / nw};
  };

  double lc[2];
  std::size_t last = 0;
  for (int c = 0; c < kChannels; ++c) {
    std::vector<std::size_t> window;
    const auto [rate, icpt] = regress([c](const Point& q) { return q.G(c, c); }, window);
    (void)icpt;
    lc[c] = rate * k[c] / 2.0;
    if (!window.empty()) {
      ex.window = std::max(ex.window, window.size());
      last = std::max(last, window.back());
    }
  }
  if (pts.size() < 3)
    throw Error(Errc::FitWindowTooSmall, "fewer than 3 retained TW samples for " + std::to_string(boundary));
  if (std::isnan(lc[0]) && std::isnan(lc[1]))
    throw Error(Errc::BelowNoiseFloor, "no reflection above the noise floor for " + std::to_string(boundary));
  double l;
  if (std::isnan(lc[0]) || std::isnan(lc[1])) {
    l = std::isnan(lc[0]) ? lc[1] : lc[0];
    ex.flags.push_back("BelowNoiseFloor: one channel has no usable reflection");
  } else {
    ex.channel_mismatch = std::abs(lc[0] - lc[1]) / std::max(lc[0], lc[1]);
    if (ex.channel_mismatch > tol.peel)
      throw Error(Errc::ChannelLengthMismatch, "channel lengths " + std::to_string(lc[0]) + " and " +
                                                   std::to_string(lc[1]) + " for " + std::to_string(boundary));
    l = 0.5 * (lc[0] + lc[1]);
  }
  if (!(l > 0.0)) throw Error(Errc::ChannelLengthMismatch, "non-positive fitted length");
  ex.report.length = l;

  // Each entry is read at the largest s inside the fit range where it is
  // still above the noise floor.
  Mat2 rho = Mat2::Zero();
  for (int c = 0; c < kChannels; ++c)
    for (int d = 0; d < kChannels; ++d)
      for (std::size_t i = last + 1; i-- > 0;) {
        const Point& q = pts[i];
        if (std::abs(q.G(c, d)) <= q.noise) continue;
        rho(c, d) = q.G(c, d) * std::exp(q.s * l * (1.0 / k[c] + 1.0 / k[d]));
        break;
      }
  ex.report.a = rho(0, 0);
  ex.report.b = rho(1, 0);
  ex.report.b_t = rho(0, 1);
  ex.report.a_t = rho(1, 1);

  ex.decay.assign(tw.boundary.size(), std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < tw.boundary.size(); ++j) {
    if (j == p) continue;
    std::vector<std::size_t> window;
    const auto [rate, icpt] = regress(
        [&](const Point& pt) { return tw.samples[pt.index].blocks[p][j](0, 0) / pt.s; }, window);
    (void)icpt;
    if (!std::isnan(rate)) ex.decay[j] = rate;
  }
  return ex;
}

}  // namespace treewave
