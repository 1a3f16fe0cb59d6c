#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "treewave/inverse.hpp"
#include "inverse_util.hpp"

namespace treewave {

using detail::axis_angle;
using detail::coeff_near;

LeafReport extract_leaf_params(const ResponseBlock& diag, VertexId boundary, const Tolerances& tol) {
  LeafReport rep;
  rep.boundary = boundary;
  double k[2];
  for (int c = 0; c < kChannels; ++c) {
    const SpikeTrain& t = diag.entries[c][c];
    if (t.empty() || std::abs(t.front().time) > tol.time_match || !(t.front().coeff < 0.0) || t.front().order != 1)
      throw Error(Errc::MissingLeadingSpike, "boundary " + std::to_string(boundary) + " channel " + std::to_string(c + 1));
    k[c] = -1.0 / t.front().coeff;
  }
  rep.k1 = k[0];
  rep.k2 = k[1];

  // First echo of every entry bounds the length from above; the true length is
  // the smallest bound, and every entry whose reflection is non-zero attains it.
  const double inv_sum = 1.0 / k[0] + 1.0 / k[1];
  const double factor[2][2] = {{2.0 / k[0], inv_sum}, {inv_sum, 2.0 / k[1]}};
  double bound[2][2];
  double first_time[2][2];
  for (int r = 0; r < kChannels; ++r)
    for (int c = 0; c < kChannels; ++c) {
      bound[r][c] = first_time[r][c] = std::numeric_limits<double>::infinity();
      const double floor = tol.spike_floor / std::min(k[0], k[1]);
      for (const Spike& sp : diag.entries[r][c]) {
        if (sp.time <= tol.time_match || std::abs(sp.coeff) <= floor) continue;
        first_time[r][c] = sp.time;
        bound[r][c] = sp.time / factor[r][c];
        break;
      }
    }
  double l = std::numeric_limits<double>::infinity();
  for (auto& row : bound)
    for (double b : row) l = std::min(l, b);
  if (!std::isfinite(l))
    throw Error(Errc::InconsistentArrivals, "no echo on the diagonal block of " + std::to_string(boundary));
  rep.length = l;
  for (int r = 0; r < kChannels; ++r)
    for (int c = 0; c < kChannels; ++c) {
      if (!std::isfinite(bound[r][c])) continue;
      const double mismatch = std::abs(bound[r][c] - l) * factor[r][c];
      if (mismatch <= tol.time_match + tol.stage1 * first_time[r][c]) {
        ++rep.support;
        rep.residual = std::max(rep.residual, mismatch / first_time[r][c]);
      }
    }
  if (rep.support < 2 && !(std::isfinite(bound[0][0]) && std::isfinite(bound[1][1])))
    throw Error(Errc::InconsistentArrivals, "only one echo entry agrees on the length of " + std::to_string(boundary));
  if (rep.support < 2)
    throw Error(Errc::InconsistentArrivals, "first echoes of " + std::to_string(boundary) + " disagree on the length");

  rep.a = coeff_near(diag.entries[0][0], 2.0 * l / k[0], tol.time_match) * k[0] / 2.0;
  rep.b = coeff_near(diag.entries[0][1], l * inv_sum, tol.time_match) * k[1] / 2.0;
  rep.a_t = coeff_near(diag.entries[1][1], 2.0 * l / k[1], tol.time_match) * k[1] / 2.0;
  rep.b_t = coeff_near(diag.entries[1][0], l * inv_sum, tol.time_match) * k[0] / 2.0;
  return rep;
}

std::vector<std::vector<std::size_t>> detect_siblings(const std::vector<LeafReport>& reports,
                                                      const Eigen::MatrixXd& tau, double tol) {
  const std::size_t n = reports.size();
  if (n == 0) throw Error(Errc::EmptyGrouping, "no boundary edges to group");
  if (static_cast<std::size_t>(tau.rows()) != n || static_cast<std::size_t>(tau.cols()) != n)
    throw Error(Errc::InvalidArgument, "arrival matrix does not match the reports");
  auto sibling = [&](std::size_t i, std::size_t j) {
    const double expect = reports[i].length / reports[i].k1 + reports[j].length / reports[j].k1;
    const double t = std::min(tau(i, j), tau(j, i));
    return std::isfinite(t) && std::abs(t - expect) <= tol * expect;
  };
  std::vector<int> comp(n, -1);
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    std::vector<std::size_t> members{s};
    comp[s] = static_cast<int>(groups.size());
    for (std::size_t q = 0; q < members.size(); ++q)
      for (std::size_t j = 0; j < n; ++j)
        if (comp[j] < 0 && sibling(members[q], j)) {
          comp[j] = comp[s];
          members.push_back(j);
        }
    std::sort(members.begin(), members.end());
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j)
        if (!sibling(members[i], members[j]))
          throw Error(Errc::NonTransitiveSiblingRelation, "boundary " + std::to_string(reports[members[i]].boundary) +
                                                              " and " + std::to_string(reports[members[j]].boundary));
    groups.push_back(std::move(members));
  }
  return groups;
}

namespace {

Mat2 conj(double angle, const Mat2& m) {
  const Mat2 r = rotation_matrix(angle);
  return r * m * r.transpose();
}

}  // namespace

StarSolution solve_star(const std::vector<LeafReport>& group, const Tolerances& tol) {
  const std::size_t n = group.size();
  if (n == 0) throw Error(Errc::EmptyGrouping, "empty star");
  StarSolution st;
  for (const LeafReport& r : group) {
    st.group.push_back(r.boundary);
    const Vec2 x = r.xi(), y = r.xi_t();
    if (std::abs(x[0] * y[1] - x[1] * y[0]) <= tol.star * x.norm() * y.norm())
      throw Error(Errc::DegenerateLeafData, "reflection data of " + std::to_string(r.boundary) + " are collinear");
    // Symmetric A with A x = 2 k1 e1 and A y = 2 k2 e2; unknowns (A00, A01, A11).
    Eigen::Matrix<double, 4, 3> m;
    m << x[0], x[1], 0, 0, x[0], x[1], y[0], y[1], 0, 0, y[0], y[1];
    Eigen::Vector4d rhs(2 * r.k1, 0, 0, 2 * r.k2);
    const Eigen::Vector3d sol = m.colPivHouseholderQr().solve(rhs);
    Mat2 a;
    a << sol[0], sol[1], sol[1], sol[2];
    st.A.push_back(a);
    st.A_residual.push_back((m * sol - rhs).norm() / rhs.norm());
    if (st.A_residual.back() > tol.star)
      throw Error(Errc::DegenerateLeafData, "no symmetric vertex matrix fits the data of " + std::to_string(r.boundary));
    if (!(a.trace() > 0 && a.determinant() > 0))
      throw Error(Errc::DegenerateLeafData, "vertex matrix of " + std::to_string(r.boundary) + " is not positive definite");
  }

  Eigen::SelfAdjointEigenSolver<Mat2> e0(st.A[0]);
  const Vec2 lam0 = e0.eigenvalues();
  const bool iso0 = lam0[1] - lam0[0] <= tol.isotropy * lam0[1];
  st.phi.assign(n, 0.0);
  st.resolved.assign(n, 0);
  st.resolved[0] = 1;
  st.isotropic.assign(n, iso0 ? 1 : 0);
  const double psi0 = axis_angle(e0.eigenvectors().col(1));
  for (std::size_t k = 0; k < n; ++k) {
    Eigen::SelfAdjointEigenSolver<Mat2> ek(st.A[k]);
    const Vec2 lam = ek.eigenvalues();
    st.eigen_mismatch = std::max(st.eigen_mismatch, (lam - lam0).norm() / lam0.norm());
    if (k > 0 && !iso0) st.phi[k] = normalize_angle(psi0 - axis_angle(ek.eigenvectors().col(1)));
  }
  if (st.eigen_mismatch > tol.star)
    throw Error(Errc::EigenvalueMismatch, "vertex matrices are not conjugate (relative mismatch " +
                                              std::to_string(st.eigen_mismatch) + ")");
  if (iso0 && n > 1) {
    for (std::size_t k = 0; k < n; ++k)
      if ((group[k].impedance() - group[k].k1 * Mat2::Identity()).norm() > tol.isotropy * group[k].k1)
        throw Error(Errc::IsotropicAmbiguity, "isotropic vertex matrix leaves the member directions undetermined");
  }
  for (std::size_t k = 1; k < n; ++k)
    st.conjugation_residual = std::max(
        st.conjugation_residual, (st.A[0] - conj(st.phi[k], st.A[k])).norm() / st.A[0].norm());

  auto parent_part = [&](std::size_t k) {
    Mat2 b = st.A[k] - group[k].impedance();
    for (std::size_t j = 0; j < n; ++j)
      if (j != k) b -= conj(st.phi[j] - st.phi[k], group[j].impedance());
    return b;
  };
  st.B = parent_part(0);
  for (std::size_t k = 1; k < n; ++k)
    st.parent_spread = std::max(st.parent_spread, (conj(st.phi[k], parent_part(k)) - st.B).norm() / st.B.norm());

  const double tr = st.B.trace(), det = st.B.determinant();
  double disc = tr * tr - 4.0 * det;
  if (disc < -tol.star * tr * tr)
    throw Error(Errc::NegativeDiscriminant, "parent stiffness has tr^2 - 4 det = " + std::to_string(disc));
  disc = std::max(disc, 0.0);
  st.parent_k1 = 0.5 * (tr + std::sqrt(disc));
  st.parent_k2 = 0.5 * (tr - std::sqrt(disc));
  if (!(st.parent_k2 > tol.star * std::abs(tr)))
    throw Error(Errc::NegativeDiscriminant, "parent speeds are not positive");
  st.parent_isotropic = std::sqrt(disc) <= tol.isotropy * tr;
  if (st.parent_isotropic) {
    st.parent_k1 = st.parent_k2 = 0.5 * tr;
    st.phi_parent = std::numeric_limits<double>::quiet_NaN();
  } else {
    Eigen::SelfAdjointEigenSolver<Mat2> eb(st.B);
    st.phi_parent = axis_angle(eb.eigenvectors().col(1));
  }
  return st;
}

SignResolution resolve_angle_sign(double alpha, const std::vector<double>& predicted,
                                  const std::vector<double>& measured, double tol) {
  if (predicted.size() != measured.size()) throw Error(Errc::InvalidArgument, "prediction/measurement size mismatch");
  const Eigen::Map<const Eigen::VectorXd> p(predicted.data(), static_cast<Eigen::Index>(predicted.size()));
  const Eigen::Map<const Eigen::VectorXd> m(measured.data(), static_cast<Eigen::Index>(measured.size()));
  SignResolution out;
  out.alpha = alpha;
  const double scale = std::max(m.norm(), p.norm());
  if (!(scale > 0.0)) return out;
  const double plus = (m - p).norm() / scale, minus = (m + p).norm() / scale;
  if (plus <= tol && minus <= tol) {
    out.residual = std::min(plus, minus);
    return out;
  }
  if (std::abs(plus - minus) <= tol) {
    out.residual = std::min(plus, minus);
    return out;
  }
  out.resolved = true;
  out.alpha = normalize_angle(minus < plus ? alpha + std::numbers::pi : alpha);
  out.residual = std::min(plus, minus);
  return out;
}

}  // namespace treewave
