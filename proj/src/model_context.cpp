#include "model_context.hpp"

#include "bespoke/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bespoke {

namespace {

void require_covariate_only(const Terms& t, const char* what) {
  for (const auto& term : t)
    if (!term.covariate_only())
      throw ConfigError(std::string(what) + " terms must not contain z, s or a");
}

void require_nonempty(const Terms& t, const char* what) {
  if (t.empty()) throw ConfigError(std::string(what) + " model has no terms");
}

void check_range(const Terms& t, std::size_t p, const char* what) {
  if (t.empty()) return;
  try {
    GLMSpec{Family::Gaussian, Variable::Y, t}.validate(p);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

Terms beta_basis(const Terms& beta) {
  Terms out;
  for (Term t : beta) {
    t.a = false;
    t.z = false;
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

}  // namespace

ModelConfig ModelConfig::from_basis(const Terms& basis) {
  ModelConfig c;
  c.tau = c.alpha = c.rho = c.b0 = c.b1 = basis;
  c.t = times(basis, 'z');
  c.pi = basis;
  for (const auto& t : times(basis, 'z')) c.pi.push_back(t);
  c.mu = c.pi;
  c.q = times(basis, 'a');
  return c;
}

void ModelConfig::validate(std::size_t p) const {
  require_nonempty(tau, "tau");
  require_nonempty(alpha, "alpha");
  require_nonempty(rho, "rho");
  require_nonempty(t, "t");
  require_nonempty(b0, "b0");
  require_nonempty(b1, "b1");
  require_covariate_only(tau, "tau");
  require_covariate_only(alpha, "alpha");
  require_covariate_only(rho, "rho");
  require_covariate_only(b0, "b0");
  require_covariate_only(b1, "b1");
  for (const auto& term : t)
    if (!term.z || term.a || term.s) throw ConfigError("every t term must contain z and not a or s");
  for (const auto& term : e1)
    if (!term.z || term.a || term.s) throw ConfigError("every e1 term must contain z and not a or s");
  if (!e1.empty() && e1.size() != rho.size())
    throw ConfigError("e1 must have as many terms as rho");
  for (const auto& term : e5)
    if (term.a || term.s) throw ConfigError("e5 terms must not contain a or s");
  for (const auto& term : q)
    if (!term.a || term.z || term.s) throw ConfigError("every q term must contain a and not z or s");
  for (const auto* m : {&pi, &mu})
    for (const auto& term : *m)
      if (term.a || term.s) throw ConfigError("pi and mu terms must not contain a or s");
  const std::pair<const Terms*, const char*> all[] = {
      {&tau, "tau"}, {&alpha, "alpha"}, {&rho, "rho"}, {&e1, "e1"}, {&t, "t"}, {&b0, "b0"},
      {&b1, "b1"},   {&e5, "e5"},       {&pi, "pi"},   {&q, "q"},   {&mu, "mu"}};
  for (const auto& [terms, name] : all) check_range(*terms, p, name);
}

void StructuralSpec::validate(std::size_t p) const {
  if (beta_terms.empty()) throw ConfigError("beta has no terms");
  for (const auto& t : beta_terms) {
    if (!t.a) throw ConfigError("every beta term must contain a");
    if (t.s) throw ConfigError("beta terms must not contain s");
    if (t.z && restriction == Restriction::NEM)
      throw ConfigError("beta may depend on z only under the NSM restriction");
  }
  check_range(beta_terms, p, "beta");
}

namespace detail {

std::shared_ptr<Ctx> Ctx::make(const Dataset& d, const ModelConfig& cfg, const StructuralSpec& spec,
                               bool need_nsm, bool need_mu) {
  cfg.validate(d.p());
  spec.validate(d.p());
  auto c = std::make_shared<Ctx>();
  c->cfg = cfg;
  c->spec = spec;
  c->y = d.y();
  c->a = d.a();
  c->z = d.z();
  c->s = d.s();
  const FactorOverride z1{std::nullopt, 1.0, std::nullopt};
  const FactorOverride z0{std::nullopt, 0.0, std::nullopt};
  c->Xtau = build_design(d, cfg.tau);
  c->Xalpha = build_design(d, cfg.alpha);
  c->Xrho = build_design(d, cfg.rho);
  const Terms e1 = cfg.e1.empty() ? times(cfg.rho, 'z') : cfg.e1;
  c->E1z1 = build_design(d, e1, z1);
  c->E1z0 = build_design(d, e1, z0);
  if (cfg.alpha_fit == AlphaFit::Joint) c->Xjoint = hcat(c->Xalpha, build_design(d, times(cfg.rho, 'z')));
  c->T1 = build_design(d, cfg.t, z1);
  c->Tobs = build_design(d, cfg.t);
  c->B0 = build_design(d, cfg.b0);
  c->B1 = build_design(d, cfg.b1);
  c->Bbeta = build_design(d, spec.beta_terms);
  c->Bbeta_a1 = build_design(d, spec.beta_terms, FactorOverride{1.0, std::nullopt, std::nullopt});
  c->Bbeta_a1z0 = build_design(d, spec.beta_terms, FactorOverride{1.0, 0.0, std::nullopt});
  c->Bbeta_a1z1 = build_design(d, spec.beta_terms, FactorOverride{1.0, 1.0, std::nullopt});
  const Terms e5 = cfg.e5.empty() ? times(beta_basis(spec.beta_terms), 'z') : cfg.e5;
  if (static_cast<int>(e5.size()) != spec.dim())
    throw ConfigError("e5 must have one term per beta parameter; supply e5 explicitly");
  c->E5 = build_design(d, e5);
  c->E5z1 = build_design(d, e5, z1);
  c->E5z0 = build_design(d, e5, z0);
  if (need_nsm) {
    if (cfg.pi.empty() || cfg.q.empty()) throw ConfigError("NSM estimation needs pi and q terms");
    c->Xpi = build_design(d, cfg.pi);
    c->Xpi_z1 = build_design(d, cfg.pi, z1);
    c->Xpi_z0 = build_design(d, cfg.pi, z0);
    c->Qobs = build_design(d, cfg.q);
    c->Q1 = build_design(d, cfg.q, FactorOverride{1.0, std::nullopt, std::nullopt});
  }
  if (need_mu) {
    if (cfg.mu.empty()) throw ConfigError("efficient index needs mu terms");
    c->Xmu = build_design(d, cfg.mu);
    c->Xmu_z1 = build_design(d, cfg.mu, z1);
    c->Xmu_z0 = build_design(d, cfg.mu, z0);
  }
  return c;
}

ZSLawArrays Ctx::law(const Eigen::VectorXd& th) const {
  return zs_law_arrays((Xtau * tau(th)).array(), (Xalpha * alpha(th)).array(),
                       (Xrho * rho(th)).array());
}

Eigen::ArrayXd Ctx::p_tau(const Eigen::VectorXd& th) const {
  return expit((Xtau * tau(th)).array());
}

Eigen::ArrayXd Ctx::eps_star(const Eigen::VectorXd& psi, const Eigen::VectorXd& nu_v,
                             const Eigen::VectorXd& theta0_v, const Eigen::VectorXd& theta1_v) const {
  Eigen::ArrayXd e = y.array() - s.array() * (Bbeta * psi).array();
  if (nu_v.size()) e -= (Tobs * nu_v).array();
  if (theta0_v.size()) e -= (B0 * theta0_v).array();
  if (theta1_v.size()) e -= s.array() * (B1 * theta1_v).array();
  return e;
}

Eigen::ArrayXd Ctx::pi_obs(const Eigen::VectorXd& th) const {
  return expit((Xpi * th.segment(off.pi, Xpi.cols())).array());
}

Eigen::ArrayXd Ctx::q_centered(const Eigen::VectorXd& th, const Eigen::VectorXd& omega) const {
  const Eigen::ArrayXd pz = pi_obs(th);
  return s.array() * ((Qobs * omega).array() - pz * (Q1 * omega).array());
}

void add_tau(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  ctx->off.tau = sys.add_block("tau", ctx->k_tau(), [c = ctx](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd w = (1 - c->s.array()) * (c->z.array() - c->p_tau(th));
    return Eigen::MatrixXd(rowscale(c->Xtau, w));
  });
}

void add_alpha(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  if (ctx->cfg.alpha_fit == AlphaFit::Joint) {
    ctx->off.alpha = sys.add_block("alpha", ctx->k_alpha(), [c = ctx](const Eigen::VectorXd& th) {
      const Eigen::VectorXd par = th.segment(c->off.alpha, c->k_alpha());
      const Eigen::ArrayXd w = c->s.array() - expit((c->Xjoint * par).array());
      return Eigen::MatrixXd(rowscale(c->Xjoint, w));
    });
    return;
  }
  ctx->off.alpha = sys.add_block("alpha", ctx->k_alpha(), [c = ctx](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd p = expit((c->Xalpha * c->alpha(th)).array());
    const Eigen::ArrayXd w = (1 - c->z.array()) * (c->s.array() - p);
    return Eigen::MatrixXd(rowscale(c->Xalpha, w));
  });
}

void add_rho(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  ctx->off.rho = sys.add_block("rho", ctx->k_rho(), [c = ctx](const Eigen::VectorXd& th) {
    return rho_scores(c->law(th), c->E1z1, c->E1z0, c->z, c->s);
  });
}

void add_nut(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  ctx->off.nut = sys.add_block(
      "nu_tilde_theta0", ctx->k_t() + ctx->k0(),
      [c = ctx](const Eigen::VectorXd& th) {
        const Eigen::ArrayXd r = c->y.array() - (c->Tobs * c->nu_tilde(th)).array() -
                                 (c->B0 * c->theta0(th)).array();
        return Eigen::MatrixXd(rowscale(hcat(c->Tobs, c->B0), (1 - c->s.array()) * r));
      },
      true);
}

void add_nu(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  ctx->off.nu = sys.add_block(
      "nu", ctx->k_t(),
      [c = ctx](const Eigen::VectorXd& th) {
        const Eigen::ArrayXd r =
            c->y.array() - (c->Tobs * c->nu(th)).array() - (c->B0 * c->theta0(th)).array();
        const Eigen::MatrixXd centered = c->Tobs - rowscale(c->T1, c->p_tau(th));
        return Eigen::MatrixXd(rowscale(centered, (1 - c->s.array()) * r));
      },
      true);
}

void add_th1(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  const int dim = ctx->k1() + (ctx->psi_hint ? 0 : ctx->dpsi());
  ctx->off.th1 = sys.add_block(
      "theta1_psi_tilde", dim,
      [c = ctx](const Eigen::VectorXd& th) {
        const Eigen::ArrayXd ps = c->law(th).s1_given(c->z.array());
        const Eigen::ArrayXd e = c->eps_star(c->psi_tilde(th), c->nu(th), c->theta0(th), c->theta1(th));
        const Eigen::ArrayXd w = (c->s.array() - ps) * e;
        if (c->psi_hint) return Eigen::MatrixXd(rowscale(c->B1, w));
        return Eigen::MatrixXd(rowscale(hcat(c->B1, c->E5), w));
      },
      true);
}

void add_pi(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  ctx->off.pi = sys.add_block("pi", static_cast<int>(ctx->Xpi.cols()), [c = ctx](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd w = c->s.array() * (c->a.array() - c->pi_obs(th));
    return Eigen::MatrixXd(rowscale(c->Xpi, w));
  });
}

void add_mu(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  ctx->off.mu = sys.add_block("mu", static_cast<int>(ctx->Xmu.cols()), [c = ctx](const Eigen::VectorXd& th) {
    const Eigen::ArrayXd p = expit((c->Xmu * th.segment(c->off.mu, c->Xmu.cols())).array());
    return Eigen::MatrixXd(rowscale(c->Xmu, c->s.array() * (c->a.array() - p)));
  });
}

void add_omega(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx) {
  ctx->off.omega = sys.add_block(
      "omega", static_cast<int>(ctx->Qobs.cols()),
      [c = ctx](const Eigen::VectorXd& th) {
        const Eigen::VectorXd omega = th.segment(c->off.omega, c->Qobs.cols());
        const Eigen::ArrayXd e =
            c->eps_star(c->psi_tilde(th), c->nu(th), c->theta0(th), c->theta1(th)) -
            c->q_centered(th, omega);
        return Eigen::MatrixXd(rowscale(c->Qobs, e));
      },
      true);
}

namespace {

void put(Eigen::VectorXd& theta, int off, const Eigen::VectorXd& v, int dim, const char* what) {
  if (off < 0) return;
  if (v.size() != dim)
    throw ConfigError(std::string("nuisance '") + what + "' has " + std::to_string(v.size()) +
                      " values, expected " + std::to_string(dim));
  theta.segment(off, dim) = v;
}

Eigen::VectorXd cat(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace

void load_nuisance(const Ctx& c, const NuisanceSet& nu, Eigen::VectorXd& theta) {
  put(theta, c.off.tau, nu.tau, c.k_tau(), "tau");
  put(theta, c.off.alpha,
      c.cfg.alpha_fit == AlphaFit::Joint ? cat(nu.alpha, nu.alpha_joint_rho) : nu.alpha,
      c.k_alpha(), "alpha");
  put(theta, c.off.rho, nu.rho, c.k_rho(), "rho");
  put(theta, c.off.nut, cat(nu.nu_tilde, nu.theta0), c.k_t() + c.k0(), "nu_tilde/theta0");
  put(theta, c.off.nu, nu.nu, c.k_t(), "nu");
  if (c.off.th1 >= 0) {
    if (c.psi_hint) put(theta, c.off.th1, nu.theta1, c.k1(), "theta1");
    else put(theta, c.off.th1, cat(nu.theta1, nu.psi_tilde), c.k1() + c.dpsi(), "theta1/psi_tilde");
  }
  put(theta, c.off.pi, nu.pi, static_cast<int>(c.Xpi.cols()), "pi");
  put(theta, c.off.omega, nu.omega, static_cast<int>(c.Qobs.cols()), "omega");
  put(theta, c.off.mu, nu.mu, static_cast<int>(c.Xmu.cols()), "mu");
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("quantile level must lie in (0, 1)");
  // Bisection on the CDF followed by Newton polishing.
  double lo = -40.0, hi = 40.0;
  auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); };
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  double x = 0.5 * (lo + hi);
  for (int i = 0; i < 3; ++i) {
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    if (pdf > 0) x -= (cdf(x) - p) / pdf;
  }
  return x;
}

Eigen::ArrayXd alt_sign(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  return (u.array() + v.array()).unaryExpr([](double x) {
    return static_cast<long>(std::llround(x)) % 2 == 0 ? 1.0 : -1.0;
  });
}

Eigen::MatrixXd eval_index(const Dataset& d, const VectorFn& f, int dim, const char* what) {
  if (dim < 0) dim = static_cast<int>(f(d.view(0).c).size());
  Eigen::MatrixXd M(static_cast<Eigen::Index>(d.n()), dim);
  for (std::size_t i = 0; i < d.n(); ++i) {
    Eigen::VectorXd v = f(d.view(i).c);
    if (v.size() != dim)
      throw ConfigError(std::string(what) + " index returned " + std::to_string(v.size()) +
                        " values, expected " + std::to_string(dim));
    M.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return M;
}

}  // namespace detail

}  // namespace bespoke
