#include "bespoke/estimators.hpp"

#include "bespoke/errors.hpp"
#include "model_context.hpp"

#include <cmath>

namespace bespoke {

using detail::alt_sign;
using detail::Ctx;
using detail::eval_index;
using detail::hcat;
using detail::rowscale;

std::string method_name(Method m) {
  switch (m) {
    case Method::TSLS: return "TSLS";
    case Method::GZ: return "g-Z";
    case Method::GS: return "g-S";
    case Method::IPW: return "IPW";
    case Method::MR_NEM: return "MR";
    case Method::MR_EFF_NEM: return "MR-eff";
    case Method::MR_NSM: return "MR-NSM";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::TSLS, Method::GZ, Method::GS, Method::IPW, Method::MR_NEM,
                   Method::MR_EFF_NEM, Method::MR_NSM})
    if (s == method_name(m)) return m;
  if (s == "tsls") return Method::TSLS;
  if (s == "gz" || s == "g_z") return Method::GZ;
  if (s == "gs" || s == "g_s") return Method::GS;
  if (s == "ipw") return Method::IPW;
  if (s == "mr" || s == "mr_nem") return Method::MR_NEM;
  if (s == "mr_eff" || s == "mr_eff_nem") return Method::MR_EFF_NEM;
  if (s == "mr_nsm") return Method::MR_NSM;
  throw ConfigError("unknown method '" + s + "'");
}

namespace {

struct Built {
  std::shared_ptr<Ctx> ctx;
  StackedSystem sys{0};
  Eigen::VectorXd theta;
  int target = -1;
  int psi_in_target = 0;
  bool target_linear = true;
  std::vector<std::string> warnings;

  int target_off() const { return sys.block_offset(target); }
  int target_dim() const { return sys.block_dim(target); }
};

void law_warnings(Built& b) {
  if (b.ctx->off.tau < 0) return;
  ZSLawArrays L = b.ctx->law(b.theta);
  const double lo = std::min({L.f00.minCoeff(), L.f10.minCoeff(), L.f01.minCoeff(), L.f11.minCoeff()});
  if (lo < kProbClip)
    b.warnings.push_back("extreme inverse-probability weights: min f(z,s|c) = " + std::to_string(lo));
}

Built build(Method method, const Dataset& d, const NuisanceSet& nuis, const EstimatorOptions& opt) {
  const bool nsm = method == Method::MR_NSM;
  const bool eff = method == Method::MR_EFF_NEM;
  if (nsm && nuis.spec.restriction != Restriction::NSM)
    throw ConfigError("MR-NSM requires a structural spec with the NSM restriction");
  if (nsm && !opt.joint_omega && nuis.omega.size() == 0)
    throw ConfigError("MR-NSM needs pi and omega; fit the pipeline with fit_nsm");
  if (eff && nuis.mu.size() == 0)
    throw ConfigError("MR-eff needs the mu model; fit the pipeline with fit_mu");

  Built b;
  b.ctx = Ctx::make(d, nuis.config, nuis.spec, nsm, eff);
  b.sys = StackedSystem(d.n());
  auto ctx = b.ctx;
  auto& sys = b.sys;
  const int dpsi = ctx->dpsi();
  const int k1 = ctx->k1();

  auto add_law = [&] {
    detail::add_tau(sys, ctx);
    detail::add_alpha(sys, ctx);
    detail::add_rho(sys, ctx);
  };
  auto add_outcome = [&] {
    detail::add_nut(sys, ctx);
    detail::add_nu(sys, ctx);
    detail::add_th1(sys, ctx);
  };

  switch (method) {
    case Method::TSLS: {
      detail::add_nut(sys, ctx);
      b.target = sys.block_count();
      b.psi_in_target = k1;
      const int off = sys.size();
      sys.add_block("tsls", k1 + dpsi, [c = ctx, k1, dpsi, off](const Eigen::VectorXd& th) {
        const Eigen::VectorXd th1 = th.segment(off, k1), psi = th.segment(off + k1, dpsi);
        const Eigen::ArrayXd r = c->eps_star(psi, c->nu_tilde(th), c->theta0(th), th1);
        return Eigen::MatrixXd(rowscale(hcat(c->B1, c->E5), c->s.array() * r));
      }, true);
      break;
    }
    case Method::GZ: {
      add_law();
      ctx->off.nu_gz = sys.add_block("nu_gz", ctx->k_t(), [c = ctx](const Eigen::VectorXd& th) {
        const Eigen::ArrayXd r = c->y.array() - (c->Tobs * th.segment(c->off.nu_gz, c->k_t())).array();
        const Eigen::MatrixXd centered = c->Tobs - rowscale(c->T1, c->p_tau(th));
        return Eigen::MatrixXd(rowscale(centered, (1 - c->s.array()) * r));
      }, true);
      b.target = sys.block_count();
      sys.add_block("gz", dpsi, [c = ctx, dpsi](const Eigen::VectorXd& th) {
        const int off = c->off.nu_gz + c->k_t();
        const Eigen::VectorXd psi = th.segment(off, dpsi);
        const Eigen::ArrayXd r = c->eps_star(psi, th.segment(c->off.nu_gz, c->k_t()),
                                             Eigen::VectorXd(), Eigen::VectorXd());
        const Eigen::ArrayXd pz = c->law(th).z1_s1;
        const Eigen::MatrixXd centered =
            c->E5 - rowscale(c->E5z1, pz) - rowscale(c->E5z0, 1 - pz);
        return Eigen::MatrixXd(rowscale(centered, c->s.array() * r));
      }, true);
      break;
    }
    case Method::GS: {
      add_law();
      b.target = sys.block_count();
      b.psi_in_target = k1;
      const int off = sys.size();
      sys.add_block("gs", k1 + dpsi, [c = ctx, k1, dpsi, off](const Eigen::VectorXd& th) {
        const Eigen::VectorXd th1 = th.segment(off, k1), psi = th.segment(off + k1, dpsi);
        const Eigen::ArrayXd r = c->eps_star(psi, Eigen::VectorXd(), Eigen::VectorXd(), th1);
        const Eigen::ArrayXd ps = c->law(th).s1_given(c->z.array());
        return Eigen::MatrixXd(rowscale(hcat(c->B1, c->E5), (c->s.array() - ps) * r));
      }, true);
      break;
    }
    case Method::IPW:
    case Method::MR_NEM:
    case Method::MR_EFF_NEM: {
      add_law();
      const bool ipw = method == Method::IPW;
      if (!ipw) add_outcome();
      if (eff) detail::add_mu(sys, ctx);
      std::shared_ptr<Eigen::MatrixXd> user_m;
      if (opt.m) user_m = std::make_shared<Eigen::MatrixXd>(eval_index(d, opt.m, dpsi, "m"));
      b.target = sys.block_count();
      const int off_target = sys.size();
      sys.add_block(ipw ? "ipw" : (eff ? "mr_eff" : "mr"), dpsi,
                    [c = ctx, dpsi, off_target, ipw, eff, user_m](const Eigen::VectorXd& th) {
        const Eigen::VectorXd psi = th.segment(off_target, dpsi);
        const ZSLawArrays L = c->law(th);
        const Eigen::ArrayXd fzs = L.cell(c->z.array(), c->s.array());
        const Eigen::ArrayXd w = alt_sign(c->z, c->s) / fzs;
        Eigen::MatrixXd M;
        if (eff) {
          const Eigen::VectorXd mu = th.segment(c->off.mu, c->Xmu.cols());
          const Eigen::ArrayXd d_mu = expit((c->Xmu_z1 * mu).array()) - expit((c->Xmu_z0 * mu).array());
          const Eigen::ArrayXd w0 = 1 / L.f00 + 1 / L.f10 + 1 / L.f01 + 1 / L.f11;
          M = rowscale(c->Bbeta_a1, d_mu / w0);
        } else if (user_m) {
          M = *user_m;
        } else {
          M = c->Bbeta_a1;
        }
        const Eigen::ArrayXd e =
            ipw ? c->eps_star(psi, Eigen::VectorXd(), Eigen::VectorXd(), Eigen::VectorXd())
                : c->eps_star(psi, c->nu(th), c->theta0(th), c->theta1(th));
        return Eigen::MatrixXd(rowscale(M, w * e));
      }, true);
      break;
    }
    case Method::MR_NSM: {
      add_law();
      add_outcome();
      detail::add_pi(sys, ctx);
      if (!opt.joint_omega) detail::add_omega(sys, ctx);
      Eigen::MatrixXd M = opt.m ? eval_index(d, opt.m, -1, "m")
                                : ctx->Bbeta_a1z0;
      Eigen::MatrixXd H = opt.h ? eval_index(d, opt.h, -1, "h")
                                : ctx->Bbeta_a1z0;
      const bool summed = M.cols() == dpsi && H.cols() == dpsi;
      if (!summed && M.cols() + H.cols() != dpsi)
        throw ConfigError("m and h must each match dim(psi) or together sum to it");
      const int kq = static_cast<int>(ctx->Qobs.cols());
      const bool joint = opt.joint_omega;
      b.target = sys.block_count();
      b.psi_in_target = joint ? kq : 0;
      const int off_target = sys.size();
      auto Mp = std::make_shared<Eigen::MatrixXd>(std::move(M));
      auto Hp = std::make_shared<Eigen::MatrixXd>(std::move(H));
      sys.add_block("mr_nsm", (joint ? kq : 0) + dpsi,
                    [c = ctx, dpsi, kq, joint, summed, off_target, Mp, Hp](const Eigen::VectorXd& th) {
        const Eigen::VectorXd psi = th.segment(off_target + (joint ? kq : 0), dpsi);
        const Eigen::VectorXd omega =
            joint ? Eigen::VectorXd(th.segment(off_target, kq)) : Eigen::VectorXd(th.segment(c->off.omega, kq));
        const ZSLawArrays L = c->law(th);
        const Eigen::ArrayXd fzs = L.cell(c->z.array(), c->s.array());
        const Eigen::ArrayXd estar = c->eps_star(psi, c->nu(th), c->theta0(th), c->theta1(th));
        const Eigen::ArrayXd e = estar - c->q_centered(th, omega);
        const Eigen::ArrayXd pa = c->pi_obs(th);
        const Eigen::ArrayXd zz = c->z.array(), aa = c->a.array();
        const Eigen::ArrayXd faz =
            (aa * pa + (1 - aa) * (1 - pa)) * (zz * L.z1_s1 + (1 - zz) * (1 - L.z1_s1));
        const Eigen::MatrixXd phi_rows = rowscale(*Mp, alt_sign(c->z, c->s) / fzs * estar);
        const Eigen::MatrixXd kap_rows = rowscale(*Hp, c->s.array() * alt_sign(c->a, c->z) / faz * e);
        Eigen::MatrixXd psi_rows = summed ? Eigen::MatrixXd(phi_rows + kap_rows) : hcat(phi_rows, kap_rows);
        if (!joint) return psi_rows;
        return hcat(rowscale(c->Qobs, e), psi_rows);
      }, true);
      break;
    }
  }

  b.theta = Eigen::VectorXd::Zero(sys.size());
  detail::load_nuisance(*ctx, nuis, b.theta);
  if (ctx->off.nu_gz >= 0) sys.solve_block(b.target - 1, b.theta);
  law_warnings(b);
  return b;
}

TargetScore target_from(const Built& b) {
  TargetScore ts;
  const int off = b.target_off(), dim = b.target_dim();
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
  ts.psi_dim = b.ctx->dpsi();
  ts.linear = b.target_linear;
  return ts;
}

}  // namespace

EstimateReport make_report(const std::string& name, const Eigen::VectorXd& x,
                           const VarianceReport& v, int psi_index, int psi_dim, double level) {
  EstimateReport r;
  r.method = name;
  r.psi = x.segment(psi_index, psi_dim);
  r.covariance = v.covariance.block(psi_index, psi_index, psi_dim, psi_dim);
  r.se = r.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  const double q = detail::normal_quantile(0.5 + 0.5 * level);
  r.ci_lower = r.psi - q * r.se;
  r.ci_upper = r.psi + q * r.se;
  r.variance_method = v.method;
  return r;
}

VarianceReport fixed_nuisance_variance(const TargetScore& ts, const Eigen::VectorXd& x) {
  EstimatingFunction mean = [&](const Eigen::VectorXd& p) {
    return Eigen::VectorXd(ts.rows(p).colwise().mean().transpose());
  };
  VarianceReport v = sandwich_variance(ts.rows(x), numeric_jacobian(mean, x));
  v.method = "sandwich (nuisance fixed)";
  return v;
}

EstimateReport solve_target(const std::string& name, const TargetScore& ts, double level) {
  EstimatingFunction mean = [&](const Eigen::VectorXd& p) {
    return Eigen::VectorXd(ts.rows(p).colwise().mean().transpose());
  };
  RootOptions ro;
  ro.linear = ts.linear;
  RootResult root = solve_estimating_equations(mean, ts.init, ro);
  EstimateReport r = make_report(name, root.x, fixed_nuisance_variance(ts, root.x), ts.psi_index,
                                 ts.psi_dim, level);
  r.converged = root.converged;
  if (!root.converged) r.warnings.push_back("target equation residual " + std::to_string(root.residual));
  return r;
}

TargetScore target_score(Method method, const Dataset& d, const NuisanceSet& nuis,
                         const EstimatorOptions& opt) {
  return target_from(build(method, d, nuis, opt));
}

EstimateReport estimate(Method method, const Dataset& d, const NuisanceSet& nuis,
                        const EstimatorOptions& opt) {
  const std::string name = method_name(method);
  if (opt.variance == VarianceMode::Bootstrap) {
    EstimatorOptions point = opt;
    point.variance = VarianceMode::FixedNuisance;
    EstimateReport r = estimate(method, d, nuis, point);
    PipelineOptions po = opt.pipeline;
    po.fit_nsm = po.fit_nsm || method == Method::MR_NSM;
    po.fit_mu = po.fit_mu || method == Method::MR_EFF_NEM;
    DatasetEstimator est = [&](const Dataset& bd) {
      NuisanceSet nb = fit_nuisance_pipeline(bd, nuis.config, nuis.spec, po);
      return estimate(method, bd, nb, point).psi;
    };
    VarianceReport v = bootstrap_se(est, d, opt.bootstrap_replicates, opt.seed);
    EstimateReport out = make_report(name, r.psi, v, 0, static_cast<int>(r.psi.size()), opt.level);
    out.warnings = r.warnings;
    out.converged = r.converged;
    if (v.failed_replicates > 0)
      out.warnings.push_back(std::to_string(v.failed_replicates) + " bootstrap replicates failed");
    return out;
  }

  Built b = build(method, d, nuis, opt);
  if (!nuis.converged) b.warnings.push_back("nuisance pipeline did not fully converge");
  if (opt.variance == VarianceMode::FixedNuisance) {
    EstimateReport r = solve_target(name, target_from(b), opt.level);
    r.warnings.insert(r.warnings.begin(), b.warnings.begin(), b.warnings.end());
    return r;
  }
  RootOptions ro;
  ro.linear = b.target_linear;
  RootResult root = b.sys.solve_block(b.target, b.theta, ro);
  VarianceReport v = b.sys.sandwich(b.theta);
  EstimateReport r = make_report(name, b.theta, v, b.target_off() + b.psi_in_target,
                                 b.ctx->dpsi(), opt.level);
  r.variance_method = "stacked sandwich";
  r.converged = root.converged;
  r.warnings = b.warnings;
  if (!root.converged) r.warnings.push_back("target equation residual " + std::to_string(root.residual));
  return r;
}

EstimateReport estimate_mr_nem(const Dataset& d, const NuisanceSet& n, const EstimatorOptions& o) {
  return estimate(Method::MR_NEM, d, n, o);
}
EstimateReport estimate_mr_eff_nem(const Dataset& d, const NuisanceSet& n, const EstimatorOptions& o) {
  return estimate(Method::MR_EFF_NEM, d, n, o);
}
EstimateReport estimate_mr_nsm(const Dataset& d, const NuisanceSet& n, const EstimatorOptions& o) {
  return estimate(Method::MR_NSM, d, n, o);
}
EstimateReport estimate_tsls(const Dataset& d, const NuisanceSet& n, const EstimatorOptions& o) {
  return estimate(Method::TSLS, d, n, o);
}
EstimateReport estimate_gz(const Dataset& d, const NuisanceSet& n, const EstimatorOptions& o) {
  return estimate(Method::GZ, d, n, o);
}
EstimateReport estimate_gs(const Dataset& d, const NuisanceSet& n, const EstimatorOptions& o) {
  return estimate(Method::GS, d, n, o);
}
EstimateReport estimate_ipw(const Dataset& d, const NuisanceSet& n, const EstimatorOptions& o) {
  return estimate(Method::IPW, d, n, o);
}

Eigen::VectorXd epsilon_star(const Dataset& d, const NuisanceSet& nuis, const Eigen::VectorXd& psi) {
  auto c = Ctx::make(d, nuis.config, nuis.spec, false, false);
  return c->eps_star(psi, nuis.nu, nuis.theta0, nuis.theta1).matrix();
}

Eigen::VectorXd epsilon(const Dataset& d, const NuisanceSet& nuis, const Eigen::VectorXd& psi) {
  if (nuis.pi.size() == 0 || nuis.omega.size() == 0)
    throw ConfigError("epsilon needs fitted pi and omega");
  auto c = Ctx::make(d, nuis.config, nuis.spec, true, false);
  const Eigen::ArrayXd pz = expit((c->Xpi * nuis.pi).array());
  const Eigen::ArrayXd q = c->s.array() * ((c->Qobs * nuis.omega).array() - pz * (c->Q1 * nuis.omega).array());
  return (c->eps_star(psi, nuis.nu, nuis.theta0, nuis.theta1) - q).matrix();
}

VectorFn efficient_m_nem(const JointLawZS& law, std::function<double(int, std::span<const double>)> mu,
                         const Terms& beta_terms) {
  return [law, mu = std::move(mu), beta_terms](std::span<const double> c) {
    const ZSCells f = law.cells(c);
    const double w0 = 1 / f[0] + 1 / f[1] + 1 / f[2] + 1 / f[3];
    const Eigen::RowVectorXd basis = design_row(RowView{1, 0, 1, c}, beta_terms);
    return Eigen::VectorXd((mu(1, c) - mu(0, c)) / w0 * basis.transpose());
  };
}

EfficientIndex efficient_h_m_nsm(const JointLawZS& zs, const JointLawAZ& az,
                                 std::function<double(int, std::span<const double>)> pi,
                                 const Terms& beta_terms) {
  EfficientIndex out;
  out.m = [zs, pi, beta_terms](std::span<const double> c) {
    const ZSCells f = zs.cells(c);
    const double w0 = 1 / f[0] + 1 / f[1] + 1 / f[2] + 1 / f[3];
    const Eigen::RowVectorXd b1 = design_row(RowView{1, 1, 1, c}, beta_terms);
    const Eigen::RowVectorXd b0 = design_row(RowView{1, 0, 1, c}, beta_terms);
    return Eigen::VectorXd((pi(1, c) * b1 - pi(0, c) * b0).transpose() / w0);
  };
  out.h = [az, beta_terms](std::span<const double> c) {
    const auto f = az.cells(c);
    const double w1 = 1 / f[0] + 1 / f[1] + 1 / f[2] + 1 / f[3];
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(beta_terms.size()));
    for (int a = 0; a <= 1; ++a)
      for (int z = 0; z <= 1; ++z) {
        const double sign = (a + z) % 2 == 0 ? 1.0 : -1.0;
        acc += sign * design_row(RowView{static_cast<double>(a), static_cast<double>(z), 1, c}, beta_terms).transpose();
      }
    return Eigen::VectorXd(acc / w1);
  };
  return out;
}

EstimateReport estimate_dr_g_benchmark(const Dataset& d, const Terms& l_terms,
                                       const EstimatorOptions& opt) {
  GLMSpec{Family::Logistic, Variable::A, l_terms}.validate(d.p());
  for (const auto& t : l_terms)
    if (t.a || t.s) throw ConfigError("benchmark terms must not contain a or s");
  auto X = std::make_shared<Eigen::MatrixXd>(build_design(d, l_terms));
  auto y = std::make_shared<Eigen::VectorXd>(d.y());
  auto a = std::make_shared<Eigen::VectorXd>(d.a());
  auto s = std::make_shared<Eigen::VectorXd>(d.s());
  const int k = static_cast<int>(X->cols());
  StackedSystem sys(d.n());
  sys.add_block("exposure", k, [X, a, s, k](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd p = expit((*X * th.head(k)).array());
    return Eigen::MatrixXd(rowscale(*X, s->array() * (a->array() - p)));
  });
  sys.add_block("outcome_psi", k + 1, [X, y, a, s, k](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd p = expit((*X * th.head(k)).array());
    const Eigen::VectorXd gamma = th.segment(k, k);
    const double psi = th(2 * k);
    const Eigen::ArrayXd r = y->array() - psi * a->array() - (*X * gamma).array();
    Eigen::MatrixXd idx(X->rows(), k + 1);
    idx << *X, (a->array() - p).matrix();
    return Eigen::MatrixXd(rowscale(idx, s->array() * r));
  }, true);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(sys.size());
  theta.head(k) = fit_logistic(*X, *a, *s).coef;
  RootResult root = sys.solve_block(1, theta);
  VarianceReport v;
  if (opt.variance == VarianceMode::FixedNuisance) {
    TargetScore ts;
    ts.rows = [&sys, &theta, k](const Eigen::VectorXd& x) {
      Eigen::VectorXd th = theta;
      th.segment(k, k + 1) = x;
      return sys.block_scores(1, th);
    };
    v = fixed_nuisance_variance(ts, theta.segment(k, k + 1));
    EstimateReport r = make_report("DR-g benchmark", theta.segment(k, k + 1), v, k, 1, opt.level);
    r.converged = root.converged;
    return r;
  }
  v = sys.sandwich(theta);
  EstimateReport r = make_report("DR-g benchmark", theta, v, 2 * k, 1, opt.level);
  r.variance_method = "stacked sandwich";
  r.converged = root.converged;
  return r;
}

}  // namespace bespoke
