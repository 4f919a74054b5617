#include "bespoke/errors.hpp"
#include "bespoke/estimators.hpp"
#include "model_context.hpp"

namespace bespoke {

using detail::Ctx;

JointLawZS NuisanceSet::zs_law() const {
  FittedModel t{GLMSpec{Family::Logistic, Variable::Z, config.tau}, tau};
  FittedModel a{GLMSpec{Family::Logistic, Variable::S, config.alpha}, alpha};
  return JointLawZS::from_models(t, a, rho, config.rho);
}

NuisanceSet fit_nuisance_pipeline(const Dataset& d, const ModelConfig& cfg,
                                  const StructuralSpec& spec, const PipelineOptions& opt) {
  auto ctx = Ctx::make(d, cfg, spec, opt.fit_nsm, opt.fit_mu);
  if (opt.psi_hint) {
    if (opt.psi_hint->size() != spec.dim()) throw ConfigError("psi hint has the wrong dimension");
    ctx->psi_hint = opt.psi_hint;
  }
  StackedSystem sys(d.n());
  detail::add_tau(sys, ctx);
  detail::add_alpha(sys, ctx);
  detail::add_rho(sys, ctx);
  const int b_rho = 2;
  detail::add_nut(sys, ctx);
  detail::add_nu(sys, ctx);
  detail::add_th1(sys, ctx);
  if (opt.fit_nsm) {
    detail::add_pi(sys, ctx);
    detail::add_omega(sys, ctx);
  }
  if (opt.fit_mu) detail::add_mu(sys, ctx);

  NuisanceSet out;
  out.config = cfg;
  out.spec = spec;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(sys.size());
  const auto& c = *ctx;

  RawFit tau = fit_logistic(c.Xtau, c.z, (1.0 - c.s.array()).matrix());
  theta.segment(c.off.tau, c.k_tau()) = tau.coef;
  if (!tau.converged) out.diagnostics.push_back("tau fit did not converge");

  if (cfg.alpha_fit == AlphaFit::Joint) {
    RawFit al = fit_logistic(c.Xjoint, c.s, Eigen::VectorXd());
    theta.segment(c.off.alpha, c.k_alpha()) = al.coef;
    theta.segment(c.off.rho, c.k_rho()) = al.coef.tail(c.k_rho());
    if (!al.converged) out.diagnostics.push_back("alpha fit did not converge");
  } else {
    RawFit al = fit_logistic(c.Xalpha, c.s, (1.0 - c.z.array()).matrix());
    theta.segment(c.off.alpha, c.k_alpha()) = al.coef;
    if (!al.converged) out.diagnostics.push_back("alpha fit did not converge");
  }

  auto note = [&](const RootResult& r, const char* what) {
    if (!r.converged) {
      out.converged = false;
      out.diagnostics.push_back(std::string(what) + " did not converge (residual " +
                                std::to_string(r.residual) + ")");
    }
  };
  RootOptions ro = opt.root;
  note(sys.solve_block(b_rho, theta, ro), "rho");
  note(sys.solve_block(3, theta, ro), "nu_tilde/theta0");
  note(sys.solve_block(4, theta, ro), "nu");
  note(sys.solve_block(5, theta, ro), "theta1");
  int next = 6;
  if (opt.fit_nsm) {
    RawFit pi = fit_logistic(c.Xpi, c.a, c.s);
    theta.segment(c.off.pi, pi.coef.size()) = pi.coef;
    if (!pi.converged) out.diagnostics.push_back("pi fit did not converge");
    note(sys.solve_block(next + 1, theta, ro), "omega");
    next += 2;
  }
  if (opt.fit_mu) {
    RawFit mu = fit_logistic(c.Xmu, c.a, c.s);
    theta.segment(c.off.mu, mu.coef.size()) = mu.coef;
    if (!mu.converged) out.diagnostics.push_back("mu fit did not converge");
  }

  out.tau = c.tau(theta);
  out.alpha = c.alpha(theta);
  if (cfg.alpha_fit == AlphaFit::Joint)
    out.alpha_joint_rho = theta.segment(c.off.alpha + c.Xalpha.cols(), c.k_rho());
  out.rho = c.rho(theta);
  out.nu_tilde = c.nu_tilde(theta);
  out.theta0 = c.theta0(theta);
  out.nu = c.nu(theta);
  out.theta1 = c.theta1(theta);
  out.psi_tilde = c.psi_tilde(theta);
  if (opt.fit_nsm) {
    out.pi = theta.segment(c.off.pi, c.Xpi.cols());
    out.omega = theta.segment(c.off.omega, c.Qobs.cols());
  }
  if (opt.fit_mu) out.mu = theta.segment(c.off.mu, c.Xmu.cols());
  return out;
}

}  // namespace bespoke
