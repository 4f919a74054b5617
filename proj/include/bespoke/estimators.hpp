#pragma once

#include "bespoke/datamodel.hpp"
#include "bespoke/jointlaw.hpp"
#include "bespoke/numkit.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bespoke {

enum class AlphaFit {
  ReferenceStratum,  // logistic S ~ alpha terms on Z=0 rows
  Joint              // logistic S ~ alpha terms + z:rho terms on all rows
};

// Working-model terms for every nuisance. Covariate-only unless noted.
struct ModelConfig {
  Terms tau;    // logit f(Z=1|S=0,C)
  Terms alpha;  // logit f(S=1|Z=0,C)
  Terms rho;    // log odds ratio between Z and S
  Terms e1;     // rho equation index; empty means z * rho; every term contains z
  Terms t;      // t(Z,C); every term contains z
  Terms b0;     // E(Y|Z=0,S=0,C)
  Terms b1;     // selection bias at Z=0
  Terms e5;     // instruments for psi in the theta1 step; empty means z * beta basis
  Terms pi;     // logit f(A=1|Z,S=1,C); may contain z
  Terms q;      // q(A,C); every term contains a
  Terms mu;     // logit E(A|Z,S=1,C) for the efficient index; may contain z
  AlphaFit alpha_fit = AlphaFit::ReferenceStratum;

  // Every covariate-only model uses `basis`; t is z * basis, pi and mu are
  // basis + z * basis and q is a * basis.
  static ModelConfig from_basis(const Terms& basis);
  void validate(std::size_t p) const;
};

enum class Restriction { NEM, NSM };

struct StructuralSpec {
  Terms beta_terms = {Term{{}, false, false, true}};  // each contains a
  Restriction restriction = Restriction::NEM;

  int dim() const { return static_cast<int>(beta_terms.size()); }
  void validate(std::size_t p) const;
};

struct NuisanceSet {
  ModelConfig config;
  StructuralSpec spec;
  Eigen::VectorXd tau, alpha, alpha_joint_rho, rho;
  Eigen::VectorXd nu_tilde, theta0, nu, theta1, psi_tilde;
  Eigen::VectorXd pi, omega, mu;  // empty when not fitted
  bool converged = true;
  std::vector<std::string> diagnostics;

  JointLawZS zs_law() const;
};

struct PipelineOptions {
  bool fit_nsm = false;  // pi and omega
  bool fit_mu = false;   // efficient-index exposure model
  // When set, theta1 is solved with psi held at this value.
  std::optional<Eigen::VectorXd> psi_hint;
  RootOptions root;
};

NuisanceSet fit_nuisance_pipeline(const Dataset& d, const ModelConfig& cfg,
                                  const StructuralSpec& spec, const PipelineOptions& opt = {});

enum class Method { TSLS, GZ, GS, IPW, MR_NEM, MR_EFF_NEM, MR_NSM };
std::string method_name(Method m);
Method parse_method(const std::string& s);

enum class VarianceMode {
  Stacked,        // sandwich over nuisance and target blocks
  FixedNuisance,  // sandwich of the target block alone
  Bootstrap
};

struct EstimatorOptions {
  VarianceMode variance = VarianceMode::Stacked;
  int bootstrap_replicates = 200;
  std::uint64_t seed = 1;
  double level = 0.95;
  VectorFn m;              // MR index m(c); default beta basis at a=1
  VectorFn h;              // MR-NSM index h(c); default beta basis at a=1
  bool joint_omega = false;  // solve omega jointly with psi in MR-NSM
  PipelineOptions pipeline;  // used when bootstrapping
};

struct EstimateReport {
  std::string method;
  Eigen::VectorXd psi, se, ci_lower, ci_upper;
  Eigen::MatrixXd covariance;
  std::string variance_method;
  bool converged = true;
  std::vector<std::string> warnings;
};

EstimateReport estimate(Method method, const Dataset& d, const NuisanceSet& nuis,
                        const EstimatorOptions& opt = {});

EstimateReport estimate_mr_nem(const Dataset& d, const NuisanceSet& nuis,
                               const EstimatorOptions& opt = {});
EstimateReport estimate_mr_eff_nem(const Dataset& d, const NuisanceSet& nuis,
                                   const EstimatorOptions& opt = {});
EstimateReport estimate_mr_nsm(const Dataset& d, const NuisanceSet& nuis,
                               const EstimatorOptions& opt = {});
EstimateReport estimate_tsls(const Dataset& d, const NuisanceSet& nuis,
                             const EstimatorOptions& opt = {});
EstimateReport estimate_gz(const Dataset& d, const NuisanceSet& nuis,
                           const EstimatorOptions& opt = {});
EstimateReport estimate_gs(const Dataset& d, const NuisanceSet& nuis,
                           const EstimatorOptions& opt = {});
EstimateReport estimate_ipw(const Dataset& d, const NuisanceSet& nuis,
                            const EstimatorOptions& opt = {});

// Per-row target estimating function of `method` with all nuisances fixed at
// `nuis`. Parameters are those of the final block (psi, plus the outcome
// bias coefficients for TSLS and g-S); `psi_index` gives psi's position.
struct TargetScore {
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> rows;
  Eigen::VectorXd init;
  int psi_index = 0;
  int psi_dim = 1;
  bool linear = true;
};
TargetScore target_score(Method method, const Dataset& d, const NuisanceSet& nuis,
                         const EstimatorOptions& opt = {});

// Solves a target score and reports the fixed-nuisance sandwich.
EstimateReport solve_target(const std::string& name, const TargetScore& ts, double level = 0.95);
// Sandwich of the target score at x with a numerical Jacobian.
VarianceReport fixed_nuisance_variance(const TargetScore& ts, const Eigen::VectorXd& x);
// Fills psi, se, covariance and the normal interval from the target parameters.
EstimateReport make_report(const std::string& name, const Eigen::VectorXd& x,
                           const VarianceReport& v, int psi_index, int psi_dim, double level);

// eps* = Y - beta S - t - b1 S - b0, and eps = eps* - S {q - E(q|Z,S=1,C)}.
Eigen::VectorXd epsilon_star(const Dataset& d, const NuisanceSet& nuis, const Eigen::VectorXd& psi);
Eigen::VectorXd epsilon(const Dataset& d, const NuisanceSet& nuis, const Eigen::VectorXd& psi);

// Efficient NEM index: w0^-1 {mu(1,c) - mu(0,c)} beta basis(c), with
// w0 = sum over cells of 1 / f(z, s | c) and mu(z,c) = E(A|Z=z,S=1,c).
VectorFn efficient_m_nem(const JointLawZS& law, std::function<double(int, std::span<const double>)> mu,
                         const Terms& beta_terms);

struct EfficientIndex {
  VectorFn h, m;
};
// Efficient NSM indices. pi(z,c) = f(A=1|Z=z,S=1,c).
EfficientIndex efficient_h_m_nsm(const JointLawZS& zs, const JointLawAZ& az,
                                 std::function<double(int, std::span<const double>)> pi,
                                 const Terms& beta_terms);

// Doubly robust g-estimator on the S=1 rows, ignoring the second sample:
// logistic A ~ l_terms, then sum [L; A - p](Y - psi A - gamma'L) = 0.
EstimateReport estimate_dr_g_benchmark(const Dataset& d, const Terms& l_terms,
                                       const EstimatorOptions& opt = {});

struct DidConfig {
  Terms z_model;  // logit f(Z=1|C)
  Terms bbar;     // b1*(C) - b0(C)
  Terms t;        // pre-period instrument contrast; every term contains z
  Terms b0;       // pre-period baseline
  Terms b1star;   // post-period baseline at Z=0
  Terms pi;       // logit f(A=1|Z,C)
  Terms q;        // every term contains a

  static DidConfig from_basis(const Terms& basis);
};

// Panels: y0 is the pre-period and y the post-period outcome.
EstimateReport estimate_did_nem(const Dataset& panel, const DidConfig& cfg,
                                const StructuralSpec& spec, const EstimatorOptions& opt = {});
EstimateReport estimate_did_nsm(const Dataset& panel, const DidConfig& cfg,
                                const StructuralSpec& spec, const EstimatorOptions& opt = {});

}  // namespace bespoke
