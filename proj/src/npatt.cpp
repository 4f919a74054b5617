#include "bespoke/npatt.hpp"

#include "bespoke/errors.hpp"

#include <cmath>
#include <sstream>

namespace bespoke {

namespace {

constexpr double kRelevanceFloor = 1e-6;

void check_relevance(double da, std::span<const double> c) {
  if (std::abs(da) >= kRelevanceFloor) return;
  std::ostringstream os;
  os << "weak instrument relevance: |delta^A| = " << std::abs(da) << " at c = (";
  for (std::size_t j = 0; j < c.size(); ++j) os << (j ? ", " : "") << c[j];
  os << ")";
  throw WeakRelevanceError(os.str());
}

double cell_zs(int z, int s, std::span<const double> c, const MarginalNuisance& m) {
  const double pz = m.z_given_s(s, c), ps = m.s_margin(c);
  return (z ? pz : 1 - pz) * (s ? ps : 1 - ps);
}

Terms concat(Terms a, const Terms& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

double eval(const Terms& terms, const Eigen::VectorXd& coef, double a, double z, double s,
            std::span<const double> c) {
  return design_row(RowView{a, z, s, c}, terms).dot(coef);
}

}  // namespace

CellFn z_given_s_from(const JointLawZS& law) {
  return [law](int s, std::span<const double> c) { return law.z1_given_s(s, c); };
}

double delta_a(std::span<const double> c, const CellFn& prop_a) { return prop_a(1, c) - prop_a(0, c); }

double delta_y(std::span<const double> c, const CellFn& outcome_by_z) {
  return outcome_by_z(1, c) - outcome_by_z(0, c);
}

double beta_c(double dy, double t1, double da, std::span<const double> c) {
  check_relevance(da, c);
  return (dy - t1) / da;
}

double gamma_c(double dy0, double t1, double da, std::span<const double> c) {
  check_relevance(da, c);
  return -(dy0 - t1) / da;
}

double treated_target_density(std::span<const double> c, const MarginalNuisance& m) {
  const double pz = m.z_given_s(1, c);
  return m.s_margin(c) * (pz * m.prop_a(1, c) + (1 - pz) * m.prop_a(0, c));
}

double eif_nem(const RowView& r, double y, const MarginalNuisance& m, double psi, double f_as) {
  const auto c = r.c;
  const int z = static_cast<int>(r.z), s = static_cast<int>(r.s);
  const double da = delta_a(c, m.prop_a);
  check_relevance(da, c);
  const double sign = (z + s) % 2 == 0 ? 1.0 : -1.0;
  const double b = m.beta_c(c);
  const double resid = y - b * (r.a - m.prop_a(0, c)) * r.s - m.t1(c) * r.z - m.y_z0(s, c);
  const double w = treated_target_density(c, m) * sign / (f_as * da * cell_zs(z, s, c, m));
  return w * resid + r.a * r.s * (b - psi) / f_as;
}

double eif_nsm(const RowView& r, double y, const MarginalNuisance& m, double psi, double f_as) {
  const auto c = r.c;
  const int z = static_cast<int>(r.z), s = static_cast<int>(r.s);
  const double da = delta_a(c, m.prop_a);
  check_relevance(da, c);
  const double g = m.gamma_c(c), t1 = m.t1(c);
  const double pa = m.prop_a(z, c);
  const double G = y + g * da * r.z - t1 * r.z - m.y_a0z0(c);
  const double w = treated_target_density(c, m) * (2 * r.z - 1) / (f_as * da * cell_zs(z, s, c, m));
  const double inner = (1 - r.a) * r.s / (1 - pa) * G + r.s * (r.a - pa) * g -
                       (1 - r.s) * (y - t1 * r.z - m.y_z0(0, c));
  return w * inner - (1 - r.a) * r.s * pa / (f_as * (1 - pa)) * G +
         r.a * r.s / f_as * (G - g - psi);
}

namespace {

using EifFn = double (*)(const RowView&, double, const MarginalNuisance&, double, double);

EstimateReport solve_np(const char* name, const Dataset& d, const MarginalNuisance& m,
                        const EstimatorOptions& opt, EifFn eif, bool nsm) {
  if (!m.t1 || !m.y_z0 || !m.prop_a || !m.z_given_s || !m.s_margin)
    throw ConfigError("marginal nuisance is incomplete");
  if (nsm && (!m.gamma_c || !m.y_a0z0)) throw ConfigError("NSM needs gamma(c) and E(Y|A=0,Z=0,S=1,c)");
  if (!nsm && !m.beta_c) throw ConfigError("NEM needs beta(c)");
  const auto n = static_cast<Eigen::Index>(d.n());
  const Eigen::ArrayXd as = d.a().array() * d.s().array();
  const double n_as = as.sum();
  if (n_as == 0) throw ConfigError("no treated rows in the target population");
  const double f_as = n_as / static_cast<double>(n);
  // Each EIF is linear in psi with slope -A S / f_as, so the root is closed form.
  Eigen::ArrayXd e0(n);
  int degenerate = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowView r = d.view(static_cast<std::size_t>(i));
    e0(i) = eif(r, d.y()(i), m, 0.0, f_as);
    const int z = static_cast<int>(r.z), s = static_cast<int>(r.s);
    const double pa = m.prop_a(z, r.c);
    if (cell_zs(z, s, r.c, m) < kProbClip || pa < kProbClip || 1 - pa < kProbClip) ++degenerate;
  }
  const double psi = e0.sum() / (n_as / f_as);
  const Eigen::ArrayXd e = e0 - as * psi / f_as;
  VarianceReport v;
  v.covariance = Eigen::MatrixXd::Constant(1, 1, e.square().mean() / static_cast<double>(n));
  v.se = v.covariance.diagonal().cwiseSqrt();
  v.method = "influence function (nuisance fixed)";
  EstimateReport r = make_report(name, Eigen::VectorXd::Constant(1, psi), v, 0, 1, opt.level);
  if (!e.isFinite().all()) r.converged = false;
  if (degenerate > 0)
    r.warnings.push_back(std::to_string(degenerate) + " rows with a probability below 1e-6");
  return r;
}

EstimateReport np_with_config(const char* name, const Dataset& d, const MarginalConfig& cfg,
                              const EstimatorOptions& opt, EifFn eif, bool nsm) {
  MarginalConfig c = cfg;
  c.fit_nsm = c.fit_nsm || nsm;
  EstimateReport r = solve_np(name, d, fit_marginal_nuisance(d, c), opt, eif, nsm);
  if (opt.variance != VarianceMode::Bootstrap) return r;
  DatasetEstimator est = [&](const Dataset& bd) {
    return solve_np(name, bd, fit_marginal_nuisance(bd, c), opt, eif, nsm).psi;
  };
  VarianceReport v = bootstrap_se(est, d, opt.bootstrap_replicates, opt.seed);
  EstimateReport out = make_report(name, r.psi, v, 0, 1, opt.level);
  out.warnings = r.warnings;
  out.converged = r.converged;
  if (v.failed_replicates > 0)
    out.warnings.push_back(std::to_string(v.failed_replicates) + " bootstrap replicates failed");
  return out;
}

}  // namespace

MarginalNuisance fit_marginal_nuisance(const Dataset& d, const MarginalConfig& cfg) {
  if (cfg.basis.empty()) throw ConfigError("marginal nuisance basis is empty");
  for (const auto& t : cfg.basis)
    if (!t.covariate_only()) throw ConfigError("marginal basis terms must depend on c only");
  const Terms& B = cfg.basis;
  const Terms bz = concat(B, times(B, 'z'));
  const Terms bs = concat(B, times(B, 's'));
  const Eigen::VectorXd& s = d.s();
  const Eigen::VectorXd s0 = (1.0 - s.array()).matrix();

  const Eigen::VectorXd prop = fit_logistic(build_design(d, bz), d.a(), s).coef;
  const Eigen::VectorXd zs = fit_logistic(build_design(d, bs), d.z(), Eigen::VectorXd()).coef;
  const Eigen::VectorXd sm = fit_logistic(build_design(d, B), s, Eigen::VectorXd()).coef;
  const Eigen::MatrixXd Xbz = build_design(d, bz);
  const Eigen::VectorXd y1 = fit_linear(Xbz, d.y(), s).coef;
  const Eigen::VectorXd y0 = fit_linear(Xbz, d.y(), s0).coef;
  const auto kb = static_cast<Eigen::Index>(B.size());

  MarginalNuisance m;
  m.prop_a = [bz, prop](int z, std::span<const double> c) { return expit(eval(bz, prop, 0, z, 1, c)); };
  m.z_given_s = [bs, zs](int sv, std::span<const double> c) { return expit(eval(bs, zs, 0, 0, sv, c)); };
  m.s_margin = [B, sm](std::span<const double> c) { return expit(eval(B, sm, 0, 0, 0, c)); };
  const Eigen::VectorXd t1c = y0.tail(kb);
  const Terms Bcopy = B;
  m.t1 = [Bcopy, t1c](std::span<const double> c) { return eval(Bcopy, t1c, 0, 0, 0, c); };
  m.y_z0 = [bz, y0, y1](int sv, std::span<const double> c) {
    return eval(bz, sv ? y1 : y0, 0, 0, 0, c);
  };
  const CellFn outcome_s1 = [bz, y1](int z, std::span<const double> c) { return eval(bz, y1, 0, z, 1, c); };
  const CellFn prop_a = m.prop_a;
  const CovariateFn t1 = m.t1;
  CovariateFn beta_pw = [outcome_s1, prop_a, t1](std::span<const double> c) {
    return beta_c(delta_y(c, outcome_s1), t1(c), delta_a(c, prop_a), c);
  };
  CovariateFn gamma_pw;
  if (cfg.fit_nsm) {
    const Eigen::VectorXd w00 = (s.array() * (1.0 - d.a().array())).matrix();
    const Eigen::VectorXd ya0 = fit_linear(Xbz, d.y(), w00).coef;
    const CellFn outcome_a0 = [bz, ya0](int z, std::span<const double> c) { return eval(bz, ya0, 0, z, 1, c); };
    m.y_a0z0 = [outcome_a0](std::span<const double> c) { return outcome_a0(0, c); };
    gamma_pw = [outcome_a0, prop_a, t1](std::span<const double> c) {
      return gamma_c(delta_y(c, outcome_a0), t1(c), delta_a(c, prop_a), c);
    };
  }

  if (cfg.beta_mode == BetaMode::Pointwise) {
    m.beta_c = beta_pw;
    m.gamma_c = gamma_pw;
    return m;
  }
  // Least-squares projection of the pointwise map over the treated target rows.
  const Terms bt = cfg.beta_terms.empty() ? B : cfg.beta_terms;
  const Eigen::MatrixXd Xb = build_design(d, bt);
  const Eigen::VectorXd w = (d.a().array() * s.array()).matrix();
  auto project = [&](const CovariateFn& f) -> CovariateFn {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.n()));
    for (std::size_t i = 0; i < d.n(); ++i)
      if (w(static_cast<Eigen::Index>(i)) > 0) v(static_cast<Eigen::Index>(i)) = f(d.view(i).c);
    const Eigen::VectorXd coef = fit_linear(Xb, v, w).coef;
    return [bt, coef](std::span<const double> c) { return eval(bt, coef, 0, 0, 0, c); };
  };
  m.beta_c = project(beta_pw);
  if (gamma_pw) m.gamma_c = project(gamma_pw);
  return m;
}

EstimateReport estimate_np_att_nem(const Dataset& d, const MarginalNuisance& m,
                                   const EstimatorOptions& opt) {
  return solve_np("NP-ATT-NEM", d, m, opt, &eif_nem, false);
}

EstimateReport estimate_np_att_nsm(const Dataset& d, const MarginalNuisance& m,
                                   const EstimatorOptions& opt) {
  return solve_np("NP-ATT-NSM", d, m, opt, &eif_nsm, true);
}

EstimateReport estimate_np_att_nem(const Dataset& d, const MarginalConfig& cfg,
                                   const EstimatorOptions& opt) {
  return np_with_config("NP-ATT-NEM", d, cfg, opt, &eif_nem, false);
}

EstimateReport estimate_np_att_nsm(const Dataset& d, const MarginalConfig& cfg,
                                   const EstimatorOptions& opt) {
  return np_with_config("NP-ATT-NSM", d, cfg, opt, &eif_nsm, true);
}

}  // namespace bespoke
