#include "bespoke/jointlaw.hpp"

#include "bespoke/errors.hpp"

#include <cmath>
#include <unordered_map>

namespace bespoke {

namespace {

void check_prob(double p, const char* what) {
  if (!(p >= kProbClip && p <= 1.0 - kProbClip))
    throw DegenerateLawError(std::string(what) + " = " + std::to_string(p) +
                             " outside the clip bounds");
}

void check_probs(const Eigen::ArrayXd& p, const char* what) {
  if (!((p >= kProbClip).all() && (p <= 1.0 - kProbClip).all()))
    throw DegenerateLawError(std::string(what) + " outside the clip bounds");
}

}  // namespace

ZSCells zs_cells(double p_tau, double p_alpha, double log_or) {
  check_prob(p_tau, "f(Z=1|S=0,c)");
  check_prob(p_alpha, "f(S=1|Z=0,c)");
  if (!std::isfinite(log_or)) throw DegenerateLawError("non-finite log odds ratio");
  // OR = 1 is independence; the normaliser is exactly one.
  if (log_or == 0.0)
    return {(1 - p_tau) * (1 - p_alpha), p_tau * (1 - p_alpha), (1 - p_tau) * p_alpha, p_tau * p_alpha};
  const double u00 = (1 - p_tau) * (1 - p_alpha);
  const double u10 = p_tau * (1 - p_alpha);
  const double u01 = (1 - p_tau) * p_alpha;
  const double u11 = p_tau * p_alpha * std::exp(log_or);
  const double tot = u00 + u10 + u01 + u11;
  return {u00 / tot, u10 / tot, u01 / tot, u11 / tot};
}

JointLawZS::JointLawZS(CovariateFn p_tau, CovariateFn p_alpha, CovariateFn log_or)
    : p_tau_(std::move(p_tau)), p_alpha_(std::move(p_alpha)), log_or_(std::move(log_or)) {}

JointLawZS JointLawZS::from_models(const FittedModel& tau, const FittedModel& alpha,
                                   Eigen::VectorXd rho, Terms rho_terms) {
  for (const auto& t : rho_terms)
    if (!t.covariate_only()) throw ConfigError("log odds ratio terms must be covariate-only");
  auto covrow = [](std::span<const double> c) { return RowView{0, 0, 0, c}; };
  return JointLawZS(
      [tau, covrow](std::span<const double> c) { return tau.predict(covrow(c)); },
      [alpha, covrow](std::span<const double> c) { return alpha.predict(covrow(c)); },
      [rho = std::move(rho), terms = std::move(rho_terms), covrow](std::span<const double> c) {
        return design_row(covrow(c), terms).dot(rho);
      });
}

ZSCells JointLawZS::cells(std::span<const double> c) const {
  return zs_cells(p_tau_(c), p_alpha_(c), log_or_(c));
}

double JointLawZS::cell(int z, int s, std::span<const double> c) const {
  if ((z != 0 && z != 1) || (s != 0 && s != 1)) throw ConfigError("z and s must be 0 or 1");
  return cells(c)[static_cast<std::size_t>(z + 2 * s)];
}

double JointLawZS::s1_given_z(int z, std::span<const double> c) const {
  auto f = cells(c);
  return f[static_cast<std::size_t>(z + 2)] / (f[static_cast<std::size_t>(z)] + f[static_cast<std::size_t>(z + 2)]);
}

double JointLawZS::z1_given_s(int s, std::span<const double> c) const {
  auto f = cells(c);
  const auto k = static_cast<std::size_t>(2 * s);
  return f[k + 1] / (f[k] + f[k + 1]);
}

double JointLawZS::z1(std::span<const double> c) const {
  auto f = cells(c);
  return f[1] + f[3];
}

double JointLawZS::s1(std::span<const double> c) const {
  auto f = cells(c);
  return f[2] + f[3];
}

JointLawAZ::JointLawAZ(PropensityFn pi, CovariateFn z1_given_s1)
    : pi_(std::move(pi)), z1_(std::move(z1_given_s1)) {}

std::array<double, 4> JointLawAZ::cells(std::span<const double> c) const {
  const double pz = z1_(c);
  check_prob(pz, "f(Z=1|S=1,c)");
  std::array<double, 4> out{};
  for (int z = 0; z <= 1; ++z) {
    const double pa = pi_(z, c);
    check_prob(pa, "f(A=1|Z,S=1,c)");
    const double fz = z == 1 ? pz : 1 - pz;
    out[static_cast<std::size_t>(2 * z)] = (1 - pa) * fz;
    out[static_cast<std::size_t>(1 + 2 * z)] = pa * fz;
  }
  return out;
}

double JointLawAZ::cell(int a, int z, std::span<const double> c) const {
  if ((a != 0 && a != 1) || (z != 0 && z != 1)) throw ConfigError("a and z must be 0 or 1");
  return cells(c)[static_cast<std::size_t>(a + 2 * z)];
}

double joint_zs_cell(int z, int s, std::span<const double> c, const JointLawZS& law) {
  return law.cell(z, s, c);
}

Eigen::VectorXd phi_binary(int z, int s, std::span<const double> c, const VectorFn& m,
                           const JointLawZS& law) {
  const double sign = (z + s) % 2 == 0 ? 1.0 : -1.0;
  return m(c) * (sign / law.cell(z, s, c));
}

Eigen::VectorXd kappa_binary(int a, int z, std::span<const double> c, const VectorFn& h,
                             const JointLawAZ& law) {
  const double sign = (a + z) % 2 == 0 ? 1.0 : -1.0;
  return h(c) * (sign / law.cell(a, z, c));
}

Eigen::ArrayXd ZSLawArrays::cell(const Eigen::ArrayXd& z, const Eigen::ArrayXd& s) const {
  return (1 - z) * (1 - s) * f00 + z * (1 - s) * f10 + (1 - z) * s * f01 + z * s * f11;
}

Eigen::ArrayXd ZSLawArrays::s1_given(const Eigen::ArrayXd& z) const {
  return z * s1_z1 + (1 - z) * s1_z0;
}

ZSLawArrays zs_law_arrays(const Eigen::ArrayXd& eta_tau, const Eigen::ArrayXd& eta_alpha,
                          const Eigen::ArrayXd& log_or) {
  ZSLawArrays L;
  L.p_tau = expit(eta_tau);
  L.p_alpha = expit(eta_alpha);
  check_probs(L.p_tau, "f(Z=1|S=0,c)");
  check_probs(L.p_alpha, "f(S=1|Z=0,c)");
  L.odds_ratio = log_or.exp();
  const Eigen::ArrayXd u00 = (1 - L.p_tau) * (1 - L.p_alpha);
  const Eigen::ArrayXd u10 = L.p_tau * (1 - L.p_alpha);
  const Eigen::ArrayXd u01 = (1 - L.p_tau) * L.p_alpha;
  const Eigen::ArrayXd u11 = L.p_tau * L.p_alpha * L.odds_ratio;
  const Eigen::ArrayXd tot = u00 + u10 + u01 + u11;
  L.f00 = u00 / tot;
  L.f10 = u10 / tot;
  L.f01 = u01 / tot;
  L.f11 = u11 / tot;
  L.s1_z0 = L.p_alpha;
  L.s1_z1 = u11 / (u11 + u10);
  L.z1_s0 = L.p_tau;
  L.z1_s1 = u11 / (u11 + u01);
  return L;
}

Eigen::MatrixXd rho_scores(const ZSLawArrays& law, const Eigen::MatrixXd& e1_z1,
                           const Eigen::MatrixXd& e1_z0, const Eigen::VectorXd& z,
                           const Eigen::VectorXd& s) {
  const Eigen::ArrayXd fz1 = law.f10 + law.f11;
  const Eigen::ArrayXd fz0 = law.f00 + law.f01;
  const Eigen::ArrayXd w1 = fz1 * law.s1_z1 * (1 - law.s1_z1);
  const Eigen::ArrayXd w0 = fz0 * law.s1_z0 * (1 - law.s1_z0);
  const Eigen::ArrayXd denom = w1 + w0;
  const Eigen::ArrayXd zz = z.array();
  const Eigen::ArrayXd resid = s.array() - law.s1_given(zz);
  Eigen::MatrixXd out(e1_z1.rows(), e1_z1.cols());
  for (Eigen::Index k = 0; k < e1_z1.cols(); ++k) {
    const Eigen::ArrayXd e1 = e1_z1.col(k).array(), e0 = e1_z0.col(k).array();
    const Eigen::ArrayXd etilde = (w1 * e1 + w0 * e0) / denom;
    out.col(k) = ((zz * e1 + (1 - zz) * e0 - etilde) * resid).matrix();
  }
  return out;
}

RhoFit estimate_rho(const Dataset& d, const FittedModel& tau, const FittedModel& alpha,
                    const Terms& rho_terms, const Terms& e1_terms, const RootOptions& opt) {
  for (const auto& t : rho_terms)
    if (!t.covariate_only()) throw ConfigError("log odds ratio terms must be covariate-only");
  const double n1 = d.s().sum();
  if (n1 == 0 || n1 == static_cast<double>(d.n())) throw ConfigError("odds ratio estimation needs both S strata");
  const Terms e1 = e1_terms.empty() ? times(rho_terms, 'z') : e1_terms;
  for (const auto& t : e1)
    if (!t.z) throw ConfigError("every e1 term must contain z");
  if (e1.size() != rho_terms.size()) throw ConfigError("e1 and rho dimensions differ");
  const Eigen::ArrayXd eta_tau = (build_design(d, tau.spec.terms) * tau.coef).array();
  const Eigen::ArrayXd eta_alpha = (build_design(d, alpha.spec.terms) * alpha.coef).array();
  const Eigen::MatrixXd R = build_design(d, rho_terms);
  const Eigen::MatrixXd E1 = build_design(d, e1, FactorOverride{std::nullopt, 1.0, std::nullopt});
  const Eigen::MatrixXd E0 = build_design(d, e1, FactorOverride{std::nullopt, 0.0, std::nullopt});
  EstimatingFunction f = [&](const Eigen::VectorXd& rho) {
    ZSLawArrays law = zs_law_arrays(eta_tau, eta_alpha, (R * rho).array());
    return Eigen::VectorXd(rho_scores(law, E1, E0, d.z(), d.s()).colwise().mean().transpose());
  };
  RootResult r = solve_estimating_equations(f, Eigen::VectorXd::Zero(R.cols()), opt);
  return RhoFit{r.x, r.converged, r.iterations};
}

AceResult ace_project(const Eigen::VectorXd& values, std::span<const std::int64_t> key1,
                      std::span<const std::int64_t> key2, double tol, int max_iter) {
  const auto n = static_cast<std::size_t>(values.size());
  if (key1.size() != n || key2.size() != n) throw ConfigError("key lengths differ from values");
  auto index = [n](std::span<const std::int64_t> key, std::vector<std::size_t>& g) {
    std::unordered_map<std::int64_t, std::size_t> ids;
    g.resize(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = ids.emplace(key[i], ids.size()).first->second;
    return ids.size();
  };
  std::vector<std::size_t> g1, g2;
  const std::size_t k1 = index(key1, g1), k2 = index(key2, g2);
  auto center = [&](Eigen::VectorXd& v, const std::vector<std::size_t>& g, std::size_t k) {
    std::vector<double> sum(k, 0.0), cnt(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[g[i]] += v(static_cast<Eigen::Index>(i));
      cnt[g[i]] += 1.0;
    }
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) worst = std::max(worst, std::abs(sum[j] / cnt[j]));
    for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) -= sum[g[i]] / cnt[g[i]];
    return worst;
  };
  AceResult r;
  r.values = values;
  for (int it = 1; it <= max_iter; ++it) {
    r.iterations = it;
    const double m1 = center(r.values, g1, k1);
    const double m2 = center(r.values, g2, k2);
    r.achieved_tol = std::max(m1, m2);
    if (r.achieved_tol <= tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

}  // namespace bespoke
