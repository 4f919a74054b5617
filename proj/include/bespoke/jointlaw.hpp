#pragma once

#include "bespoke/datamodel.hpp"
#include "bespoke/numkit.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <span>

namespace bespoke {

using CovariateFn = std::function<double(std::span<const double>)>;
using VectorFn = std::function<Eigen::VectorXd(std::span<const double>)>;

// Cells are indexed z + 2 s: (0,0), (1,0), (0,1), (1,1).
using ZSCells = std::array<double, 4>;

// f(z, s | c) from f(Z=1|S=0,c), f(S=1|Z=0,c) and the log odds ratio.
// Throws DegenerateLawError when either probability leaves [1e-6, 1 - 1e-6].
ZSCells zs_cells(double p_tau, double p_alpha, double log_or);

// Joint law of (Z, S) given C under the odds-ratio parametrisation.
class JointLawZS {
 public:
  JointLawZS(CovariateFn p_tau, CovariateFn p_alpha, CovariateFn log_or);
  static JointLawZS from_models(const FittedModel& tau, const FittedModel& alpha,
                                Eigen::VectorXd rho, Terms rho_terms);

  ZSCells cells(std::span<const double> c) const;
  double cell(int z, int s, std::span<const double> c) const;
  double s1_given_z(int z, std::span<const double> c) const;
  double z1_given_s(int s, std::span<const double> c) const;
  double z1(std::span<const double> c) const;
  double s1(std::span<const double> c) const;

 private:
  CovariateFn p_tau_, p_alpha_, log_or_;
};

// Joint law of (A, Z) given S=1 and C: f(A|Z,S=1,c) f(Z|S=1,c).
class JointLawAZ {
 public:
  using PropensityFn = std::function<double(int z, std::span<const double> c)>;
  JointLawAZ(PropensityFn pi, CovariateFn z1_given_s1);

  // Cells indexed a + 2 z.
  std::array<double, 4> cells(std::span<const double> c) const;
  double cell(int a, int z, std::span<const double> c) const;

 private:
  PropensityFn pi_;
  CovariateFn z1_;
};

double joint_zs_cell(int z, int s, std::span<const double> c, const JointLawZS& law);

// m(c) (-1)^(z+s) / f(z, s | c).
Eigen::VectorXd phi_binary(int z, int s, std::span<const double> c, const VectorFn& m,
                           const JointLawZS& law);
// h(c) (-1)^(a+z) / f(a, z | S=1, c).
Eigen::VectorXd kappa_binary(int a, int z, std::span<const double> c, const VectorFn& h,
                             const JointLawAZ& law);

// Row-wise evaluation of the (Z, S) law from linear predictors.
struct ZSLawArrays {
  Eigen::ArrayXd p_tau, p_alpha, odds_ratio;
  Eigen::ArrayXd f00, f10, f01, f11;
  Eigen::ArrayXd s1_z0, s1_z1;  // f(S=1 | Z=z, c)
  Eigen::ArrayXd z1_s0, z1_s1;  // f(Z=1 | S=s, c)

  Eigen::ArrayXd cell(const Eigen::ArrayXd& z, const Eigen::ArrayXd& s) const;
  Eigen::ArrayXd s1_given(const Eigen::ArrayXd& z) const;
};

ZSLawArrays zs_law_arrays(const Eigen::ArrayXd& eta_tau, const Eigen::ArrayXd& eta_alpha,
                          const Eigen::ArrayXd& log_or);

// Per-row log odds ratio estimating function
//   {e1(Z,C) - E~(C)} {S - f(S=1|Z,C)},
// E~(C) = E*{e1 w | C} / E*{w | C}, w = f(S=1|Z,C) f(S=0|Z,C), with E* over Z
// given C under the working law. e1_z1 / e1_z0 are e1 at z=1 / z=0.
Eigen::MatrixXd rho_scores(const ZSLawArrays& law, const Eigen::MatrixXd& e1_z1,
                           const Eigen::MatrixXd& e1_z0, const Eigen::VectorXd& z,
                           const Eigen::VectorXd& s);

struct RhoFit {
  Eigen::VectorXd rho;
  bool converged = false;
  int iterations = 0;
};

// e1_terms defaults to z times rho_terms; every e1 term must contain z.
RhoFit estimate_rho(const Dataset& d, const FittedModel& tau, const FittedModel& alpha,
                    const Terms& rho_terms, const Terms& e1_terms = {},
                    const RootOptions& opt = {});

struct AceResult {
  Eigen::VectorXd values;
  bool converged = false;
  int iterations = 0;
  double achieved_tol = 0.0;
};

// Alternating projection onto functions with zero mean within every level of
// key1 and of key2. Without convergence the last iterate is returned with
// converged = false.
AceResult ace_project(const Eigen::VectorXd& values, std::span<const std::int64_t> key1,
                      std::span<const std::int64_t> key2, double tol = 1e-10,
                      int max_iter = 1000);

}  // namespace bespoke
