#include "bespoke/errors.hpp"
#include "bespoke/estimators.hpp"
#include "model_context.hpp"

#include <memory>

namespace bespoke {

using detail::alt_sign;
using detail::eval_index;
using detail::hcat;
using detail::rowscale;

DidConfig DidConfig::from_basis(const Terms& basis) {
  DidConfig c;
  c.z_model = basis;
  c.bbar = basis;
  c.t = times(basis, 'z');
  c.b0 = basis;
  c.b1star = basis;
  c.pi = basis;
  for (const auto& t : times(basis, 'z')) c.pi.push_back(t);
  c.q = times(basis, 'a');
  return c;
}

namespace {

struct DidData {
  Eigen::VectorXd y0, y1, dy, a, z;
  Eigen::MatrixXd Xz, Bb, Bbeta, M, H;
  Eigen::MatrixXd Xpi, Xpi1, Xpi0, T, B0, B1, Qobs, Q1, Q0;
};

void check_panel(const Dataset& d, const DidConfig& cfg, const StructuralSpec& spec, bool nsm) {
  if (!d.is_panel()) throw ConfigError("difference-in-differences needs a panel with y0");
  spec.validate(d.p());
  for (const auto& t : spec.beta_terms)
    if (t.s) throw ConfigError("beta terms must not contain s in a panel");
  if (!nsm)
    for (const auto& t : spec.beta_terms)
      if (t.z) throw ConfigError("beta terms must not contain z under NEM");
  auto covariate_only = [](const Terms& ts, const char* what) {
    if (ts.empty()) throw ConfigError(std::string(what) + " model has no terms");
    for (const auto& t : ts)
      if (!t.covariate_only()) throw ConfigError(std::string(what) + " terms must depend on c only");
  };
  covariate_only(cfg.z_model, "z");
  covariate_only(cfg.bbar, "bbar");
  if (!nsm) return;
  covariate_only(cfg.b0, "b0");
  covariate_only(cfg.b1star, "b1star");
  for (const auto& t : cfg.t)
    if (!t.z || t.a || t.s) throw ConfigError("every t term must contain z and not a or s");
  for (const auto& t : cfg.q)
    if (!t.a || t.s) throw ConfigError("every q term must contain a and not s");
  for (const auto& t : cfg.pi)
    if (t.a || t.s) throw ConfigError("pi terms must not contain a or s");
  if (cfg.t.empty() || cfg.q.empty() || cfg.pi.empty() || cfg.b0.empty() || cfg.b1star.empty())
    throw ConfigError("NSM needs non-empty t, b0, b1star, pi and q models");
}

std::shared_ptr<DidData> load(const Dataset& d, const DidConfig& cfg, const StructuralSpec& spec,
                              const EstimatorOptions& opt, bool nsm) {
  auto D = std::make_shared<DidData>();
  const int dpsi = spec.dim();
  D->y0 = d.y0();
  D->y1 = d.y();
  D->dy = D->y1 - D->y0;
  D->a = d.a();
  D->z = d.z();
  D->Xz = build_design(d, cfg.z_model);
  D->Bb = build_design(d, cfg.bbar);
  D->Bbeta = build_design(d, spec.beta_terms);
  const Eigen::MatrixXd base = build_design(d, spec.beta_terms, FactorOverride{1.0, 0.0, std::nullopt});
  D->M = opt.m ? eval_index(d, opt.m, -1, "m") : base;
  if (!nsm) {
    if (D->M.cols() != dpsi) throw ConfigError("m must match dim(psi)");
    return D;
  }
  D->H = opt.h ? eval_index(d, opt.h, -1, "h") : base;
  if (D->M.cols() != dpsi || D->H.cols() != dpsi) throw ConfigError("m and h must match dim(psi)");
  D->Xpi = build_design(d, cfg.pi);
  D->T = build_design(d, cfg.t);
  D->B0 = build_design(d, cfg.b0);
  D->B1 = build_design(d, cfg.b1star);
  D->Qobs = build_design(d, cfg.q);
  D->Q1 = build_design(d, cfg.q, FactorOverride{1.0, std::nullopt, std::nullopt});
  D->Q0 = build_design(d, cfg.q, FactorOverride{0.0, std::nullopt, std::nullopt});
  return D;
}

// Blocks: z model, then (for NSM) pi and the pre-period fit, then the target.
struct DidSystem {
  StackedSystem sys{0};
  Eigen::VectorXd theta;
  int target = 0;
  int psi_in_target = 0;
};

DidSystem build_did(const Dataset& d, const DidConfig& cfg, const StructuralSpec& spec,
                    const EstimatorOptions& opt, bool nsm) {
  check_panel(d, cfg, spec, nsm);
  auto D = load(d, cfg, spec, opt, nsm);
  const int dpsi = spec.dim();
  const int kz = static_cast<int>(D->Xz.cols()), kb = static_cast<int>(D->Bb.cols());
  DidSystem out;
  StackedSystem& sys = out.sys;
  sys = StackedSystem(d.n());
  sys.add_block("z_model", kz, [D, kz](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd pz = expit((D->Xz * th.head(kz)).array());
    return Eigen::MatrixXd(rowscale(D->Xz, D->z.array() - pz));
  });
  if (!nsm) {
    sys.add_block("did_nem", kb + dpsi, [D, kz, kb, dpsi](const Eigen::VectorXd& th) {
      const Eigen::ArrayXd pz = expit((D->Xz * th.head(kz)).array());
      const Eigen::VectorXd bbar = th.segment(kz, kb), psi = th.segment(kz + kb, dpsi);
      const Eigen::ArrayXd e = (D->dy - D->Bbeta * psi - D->Bb * bbar).array();
      return hcat(rowscale(D->Bb, e), rowscale(D->M, (D->z.array() - pz) * e));
    }, true);
    out.target = 1;
    out.psi_in_target = kb;
    out.theta = Eigen::VectorXd::Zero(sys.size());
    out.theta.head(kz) = fit_logistic(D->Xz, D->z, Eigen::VectorXd()).coef;
    return out;
  }

  const int kpi = static_cast<int>(D->Xpi.cols()), kt = static_cast<int>(D->T.cols());
  const int k0 = static_cast<int>(D->B0.cols()), k1 = static_cast<int>(D->B1.cols());
  const int kq = static_cast<int>(D->Qobs.cols());
  const int off_pi = kz, off_pre = kz + kpi, off_tgt = off_pre + kt + k0;
  sys.add_block("pi", kpi, [D, off_pi, kpi](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd p = expit((D->Xpi * th.segment(off_pi, kpi)).array());
    return Eigen::MatrixXd(rowscale(D->Xpi, D->a.array() - p));
  });
  sys.add_block("pre_period", kt + k0, [D, off_pre, kt, k0](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd e =
        (D->y0 - D->T * th.segment(off_pre, kt) - D->B0 * th.segment(off_pre + kt, k0)).array();
    return hcat(rowscale(D->T, e), rowscale(D->B0, e));
  }, true);
  sys.add_block("did_nsm", kb + k1 + kq + dpsi,
                [D, kz, kb, k1, kq, dpsi, kpi, kt, off_pi, off_pre, off_tgt](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd pz = expit((D->Xz * th.head(kz)).array());
    const Eigen::ArrayXd pa = expit((D->Xpi * th.segment(off_pi, kpi)).array());
    const Eigen::VectorXd nu = th.segment(off_pre, kt);
    const Eigen::VectorXd bbar = th.segment(off_tgt, kb), b1 = th.segment(off_tgt + kb, k1);
    const Eigen::VectorXd omega = th.segment(off_tgt + kb + k1, kq);
    const Eigen::VectorXd psi = th.segment(off_tgt + kb + k1 + kq, dpsi);
    const Eigen::ArrayXd zz = D->z.array(), aa = D->a.array();
    const Eigen::VectorXd beta = D->Bbeta * psi;
    const Eigen::ArrayXd ed = (D->dy - beta - D->Bb * bbar).array();
    const Eigen::ArrayXd qc =
        (D->Qobs * omega).array() - pa * (D->Q1 * omega).array() - (1 - pa) * (D->Q0 * omega).array();
    const Eigen::ArrayXd e1 = (D->y1 - beta - D->T * nu - D->B1 * b1).array() - qc;
    const Eigen::ArrayXd faz = (aa * pa + (1 - aa) * (1 - pa)) * (zz * pz + (1 - zz) * (1 - pz));
    const Eigen::MatrixXd psi_rows =
        rowscale(D->M, (zz - pz) * ed) + rowscale(D->H, alt_sign(D->a, D->z) / faz * e1);
    return hcat(hcat(rowscale(D->Bb, ed), rowscale(D->B1, e1)), hcat(rowscale(D->Qobs, e1), psi_rows));
  }, true);
  out.target = 3;
  out.psi_in_target = kb + k1 + kq;
  out.theta = Eigen::VectorXd::Zero(sys.size());
  out.theta.head(kz) = fit_logistic(D->Xz, D->z, Eigen::VectorXd()).coef;
  out.theta.segment(off_pi, kpi) = fit_logistic(D->Xpi, D->a, Eigen::VectorXd()).coef;
  RootOptions ro;
  ro.linear = true;
  sys.solve_block(2, out.theta, ro);
  return out;
}

EstimateReport run_did(const char* name, const Dataset& d, const DidConfig& cfg,
                       const StructuralSpec& spec, const EstimatorOptions& opt, bool nsm) {
  if (opt.variance == VarianceMode::Bootstrap) {
    EstimatorOptions point = opt;
    point.variance = VarianceMode::FixedNuisance;
    EstimateReport r = run_did(name, d, cfg, spec, point, nsm);
    DatasetEstimator est = [&](const Dataset& bd) { return run_did(name, bd, cfg, spec, point, nsm).psi; };
    VarianceReport v = bootstrap_se(est, d, opt.bootstrap_replicates, opt.seed);
    EstimateReport out = make_report(name, r.psi, v, 0, static_cast<int>(r.psi.size()), opt.level);
    out.converged = r.converged;
    out.warnings = r.warnings;
    if (v.failed_replicates > 0)
      out.warnings.push_back(std::to_string(v.failed_replicates) + " bootstrap replicates failed");
    return out;
  }
  DidSystem b = build_did(d, cfg, spec, opt, nsm);
  const int off = b.sys.block_offset(b.target), dim = b.sys.block_dim(b.target);
  if (opt.variance == VarianceMode::FixedNuisance) {
    TargetScore ts;
    auto sys = std::make_shared<StackedSystem>(b.sys);
    auto theta = std::make_shared<Eigen::VectorXd>(b.theta);
    const int target = b.target;
    ts.rows = [sys, theta, off, dim, target](const Eigen::VectorXd& x) {
      Eigen::VectorXd th = *theta;
      th.segment(off, dim) = x;
      return sys->block_scores(target, th);
    };
    ts.init = b.theta.segment(off, dim);
    ts.psi_index = b.psi_in_target;
    ts.psi_dim = spec.dim();
    return solve_target(name, ts, opt.level);
  }
  RootOptions ro;
  ro.linear = true;
  RootResult root = b.sys.solve_block(b.target, b.theta, ro);
  EstimateReport r = make_report(name, b.theta, b.sys.sandwich(b.theta), off + b.psi_in_target,
                                 spec.dim(), opt.level);
  r.variance_method = "stacked sandwich";
  r.converged = root.converged;
  if (!root.converged) r.warnings.push_back("target equation residual " + std::to_string(root.residual));
  return r;
}

}  // namespace

EstimateReport estimate_did_nem(const Dataset& panel, const DidConfig& cfg,
                                const StructuralSpec& spec, const EstimatorOptions& opt) {
  return run_did("DiD-NEM", panel, cfg, spec, opt, false);
}

EstimateReport estimate_did_nsm(const Dataset& panel, const DidConfig& cfg,
                                const StructuralSpec& spec, const EstimatorOptions& opt) {
  return run_did("DiD-NSM", panel, cfg, spec, opt, true);
}

}  // namespace bespoke
