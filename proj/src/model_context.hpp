#pragma once

// Shared design matrices and estimating-function blocks for the two-sample
// estimators. Internal to the library.

#include "bespoke/estimators.hpp"

#include <memory>

namespace bespoke::detail {

struct Offsets {
  int tau = -1, alpha = -1, rho = -1;
  int nut = -1;  // (nu_tilde, theta0)
  int nu = -1;
  int th1 = -1;  // (theta1, psi_tilde) or theta1 alone under a psi hint
  int pi = -1, omega = -1, mu = -1;
  int nu_gz = -1;
};

struct Ctx {
  ModelConfig cfg;
  StructuralSpec spec;
  std::optional<Eigen::VectorXd> psi_hint;
  Offsets off;

  Eigen::VectorXd y, a, z, s;
  Eigen::MatrixXd Xtau, Xalpha, Xjoint, Xrho, E1z1, E1z0;
  Eigen::MatrixXd T1, Tobs, B0, B1;
  Eigen::MatrixXd Bbeta, Bbeta_a1, Bbeta_a1z0, Bbeta_a1z1, E5, E5z1, E5z0;
  Eigen::MatrixXd Xpi, Xpi_z1, Xpi_z0, Qobs, Q1;
  Eigen::MatrixXd Xmu_z1, Xmu_z0, Xmu;

  int k_tau() const { return static_cast<int>(Xtau.cols()); }
  int k_alpha() const {
    return static_cast<int>(cfg.alpha_fit == AlphaFit::Joint ? Xjoint.cols() : Xalpha.cols());
  }
  int k_rho() const { return static_cast<int>(Xrho.cols()); }
  int k_t() const { return static_cast<int>(Tobs.cols()); }
  int k0() const { return static_cast<int>(B0.cols()); }
  int k1() const { return static_cast<int>(B1.cols()); }
  int dpsi() const { return static_cast<int>(Bbeta.cols()); }

  static std::shared_ptr<Ctx> make(const Dataset& d, const ModelConfig& cfg,
                                   const StructuralSpec& spec, bool need_nsm, bool need_mu);

  // Parameter segments.
  Eigen::VectorXd tau(const Eigen::VectorXd& th) const { return th.segment(off.tau, k_tau()); }
  Eigen::VectorXd alpha(const Eigen::VectorXd& th) const {
    return th.segment(off.alpha, static_cast<Eigen::Index>(Xalpha.cols()));
  }
  Eigen::VectorXd rho(const Eigen::VectorXd& th) const { return th.segment(off.rho, k_rho()); }
  Eigen::VectorXd nu_tilde(const Eigen::VectorXd& th) const { return th.segment(off.nut, k_t()); }
  Eigen::VectorXd theta0(const Eigen::VectorXd& th) const {
    return th.segment(off.nut + k_t(), k0());
  }
  Eigen::VectorXd nu(const Eigen::VectorXd& th) const { return th.segment(off.nu, k_t()); }
  Eigen::VectorXd theta1(const Eigen::VectorXd& th) const { return th.segment(off.th1, k1()); }
  Eigen::VectorXd psi_tilde(const Eigen::VectorXd& th) const {
    return psi_hint ? *psi_hint : Eigen::VectorXd(th.segment(off.th1 + k1(), dpsi()));
  }

  ZSLawArrays law(const Eigen::VectorXd& th) const;
  Eigen::ArrayXd p_tau(const Eigen::VectorXd& th) const;

  // eps* with optional pieces; empty vectors drop the corresponding term.
  Eigen::ArrayXd eps_star(const Eigen::VectorXd& psi, const Eigen::VectorXd& nu,
                          const Eigen::VectorXd& theta0, const Eigen::VectorXd& theta1) const;
  // f(A=1|Z,S=1,C) at observed z.
  Eigen::ArrayXd pi_obs(const Eigen::VectorXd& th) const;
  // S {q(A,C) - E(q|Z,S=1,C)}.
  Eigen::ArrayXd q_centered(const Eigen::VectorXd& th, const Eigen::VectorXd& omega) const;
};

// Row-wise multiply of a design by a per-row weight.
inline Eigen::MatrixXd rowscale(const Eigen::MatrixXd& X, const Eigen::ArrayXd& w) {
  return w.matrix().asDiagonal() * X;
}

inline Eigen::MatrixXd hcat(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(A.rows(), A.cols() + B.cols());
  out << A, B;
  return out;
}

// Nuisance blocks; each records its offset in ctx->off.
void add_tau(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);
void add_alpha(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);
void add_rho(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);
void add_nut(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);
void add_nu(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);
void add_th1(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);
void add_pi(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);
void add_omega(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);
void add_mu(StackedSystem& sys, const std::shared_ptr<Ctx>& ctx);

// Copies fitted nuisance values into theta for every block present.
void load_nuisance(const Ctx& ctx, const NuisanceSet& nuis, Eigen::VectorXd& theta);

// Per-row sign (-1)^(u+v).
Eigen::ArrayXd alt_sign(const Eigen::VectorXd& u, const Eigen::VectorXd& v);
// Evaluates a user index on every row; dim < 0 takes the dimension from the first row.
Eigen::MatrixXd eval_index(const Dataset& d, const VectorFn& f, int dim, const char* what);

double normal_quantile(double p);

}  // namespace bespoke::detail
