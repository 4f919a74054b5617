#pragma once

// Closed-form Wald ratios computed from raw cell means, for comparison with
// the estimators run with saturated working models.

#include "bespoke/datamodel.hpp"
#include "bespoke/estimators.hpp"
#include "bespoke/npatt.hpp"
#include "bespoke/numkit.hpp"
#include "bespoke/simlab.hpp"

#include <cmath>
#include <random>

namespace identity {

// The simulation design with covariates dropped, or with C2 dropped and C1 kept.
inline bespoke::Dataset without_c2(std::size_t n, std::uint64_t seed, bool keep_c1) {
  const bespoke::Dataset d = bespoke::generate_dataset(n, seed);
  if (keep_c1) return bespoke::Dataset(d.y(), d.a(), d.z(), d.s(), d.c().leftCols(1), {"c1"});
  return bespoke::Dataset(d.y(), d.a(), d.z(), d.s(), Eigen::MatrixXd(d.n(), 0));
}

struct CellMeans {
  double y[2][2] = {}, a[2][2] = {}, n[2][2] = {};  // [z][s]
};

inline CellMeans cell_means(const bespoke::Dataset& d, int c = -1) {
  CellMeans m;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (c >= 0 && d.c()(k, 0) != c) continue;
    const int z = static_cast<int>(d.z()(k)), s = static_cast<int>(d.s()(k));
    m.y[z][s] += d.y()(k);
    m.a[z][s] += d.a()(k);
    m.n[z][s] += 1;
  }
  for (int z = 0; z < 2; ++z)
    for (int s = 0; s < 2; ++s) {
      m.y[z][s] /= m.n[z][s];
      m.a[z][s] /= m.n[z][s];
    }
  return m;
}

inline double wald(const CellMeans& m) {
  const double t = m.y[1][0] - m.y[0][0];
  return (m.y[1][1] - m.y[0][1] - t) / (m.a[1][1] - m.a[0][1]);
}

// |NP-ATT NEM estimate - Wald ratio| with no covariates.
inline double np_att_wald_gap(std::uint64_t seed = 31) {
  const bespoke::Dataset d = without_c2(4000, seed, false);
  bespoke::MarginalConfig cfg;
  cfg.basis = bespoke::parse_terms("1");
  const double psi = bespoke::estimate_np_att_nem(d, cfg).psi(0);
  return std::abs(psi - wald(cell_means(d)));
}

// Panel with a pre-period outcome, no covariates.
inline bespoke::Dataset did_panel(std::size_t n, std::uint64_t seed, double psi = 1.0, bool covariate = false) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> N(0, 1);
  std::uniform_real_distribution<double> U(0, 1);
  const auto n_ = static_cast<Eigen::Index>(n);
  Eigen::VectorXd y0(n_), y1(n_), a(n_), z(n_);
  Eigen::MatrixXd c(n_, covariate ? 1 : 0);
  for (Eigen::Index i = 0; i < n_; ++i) {
    const double ci = covariate ? N(g) : 0.0, u = N(g);
    const double zi = U(g) < bespoke::expit(0.3 * ci) ? 1 : 0;
    const double ai = U(g) < bespoke::expit(-0.5 + 1.2 * zi + 0.3 * ci + 0.5 * u) ? 1 : 0;
    y0(i) = 1 + 0.5 * ci + u + zi * (0.5 + 0.3 * ci) + N(g);
    y1(i) = 2 + 0.8 * ci + u + zi * (0.5 + 0.3 * ci) + psi * ai + N(g);
    a(i) = ai;
    z(i) = zi;
    if (covariate) c(i, 0) = ci;
  }
  return bespoke::Dataset::panel(y0, y1, a, z, c);
}

// |DiD NEM estimate - {E(dY|Z=1) - E(dY|Z=0)} / {E(A|Z=1) - E(A|Z=0)}|.
inline double did_wald_gap(std::uint64_t seed = 9) {
  const bespoke::Dataset d = did_panel(3000, seed);
  bespoke::DidConfig cfg = bespoke::DidConfig::from_basis(bespoke::parse_terms("1"));
  const double psi = bespoke::estimate_did_nem(d, cfg, bespoke::StructuralSpec{}).psi(0);
  double m[2] = {}, a[2] = {}, n[2] = {};
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const int z = static_cast<int>(d.z()(k));
    m[z] += d.y()(k) - d.y0()(k);
    a[z] += d.a()(k);
    n[z] += 1;
  }
  return std::abs(psi - (m[1] / n[1] - m[0] / n[0]) / (a[1] / n[1] - a[0] / n[0]));
}

}  // namespace identity
