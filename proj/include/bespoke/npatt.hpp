#pragma once

#include "bespoke/datamodel.hpp"
#include "bespoke/estimators.hpp"
#include "bespoke/jointlaw.hpp"

#include <functional>
#include <span>

namespace bespoke {

// Functions of (z or s, c).
using CellFn = std::function<double(int, std::span<const double>)>;

// Working models for the marginal ATT. beta_c and gamma_c may be left empty
// when the estimator should not need them (NSM ignores beta_c, NEM gamma_c).
struct MarginalNuisance {
  CovariateFn beta_c;    // beta(c)
  CovariateFn gamma_c;   // gamma(c)
  CovariateFn t1;        // t(1, c)
  CellFn y_z0;           // E(Y | Z=0, S=s, c)
  CovariateFn y_a0z0;    // E(Y | A=0, Z=0, S=1, c)
  CellFn prop_a;         // f(A=1 | Z=z, S=1, c)
  CellFn z_given_s;      // f(Z=1 | S=s, c)
  CovariateFn s_margin;  // f(S=1 | c)
};

// f(Z=1 | S=s, c) read off a joint law.
CellFn z_given_s_from(const JointLawZS& law);

double delta_a(std::span<const double> c, const CellFn& prop_a);
// E(Y|Z=1,.) - E(Y|Z=0,.) for an outcome regression indexed by z.
double delta_y(std::span<const double> c, const CellFn& outcome_by_z);
// {dy - t1} / da; throws WeakRelevanceError naming c when |da| < 1e-6.
double beta_c(double dy, double t1, double da, std::span<const double> c = {});
// -{dy0 - t1} / da with the same relevance check.
double gamma_c(double dy0, double t1, double da, std::span<const double> c = {});

// f(A=1, S=1 | c) = f(S=1|c) sum_z f(z|S=1,c) f(A=1|z,S=1,c).
double treated_target_density(std::span<const double> c, const MarginalNuisance& m);

// Efficient influence functions at psi; f_as is f(A=1, S=1).
double eif_nem(const RowView& r, double y, const MarginalNuisance& m, double psi, double f_as);
double eif_nsm(const RowView& r, double y, const MarginalNuisance& m, double psi, double f_as);

enum class BetaMode { Pointwise, Projected };

struct MarginalConfig {
  Terms basis;        // covariate basis shared by the working models
  Terms beta_terms;   // projection basis for beta and gamma; empty means basis
  BetaMode beta_mode = BetaMode::Pointwise;
  bool fit_nsm = false;
};

// Parametric working models: logistic A ~ basis*z on S=1, Z ~ basis*s,
// S ~ basis, linear Y ~ basis*z within each S stratum (and on A=0, S=1 for
// NSM). t(1,c) is the Z contrast in the S=0 stratum.
MarginalNuisance fit_marginal_nuisance(const Dataset& d, const MarginalConfig& cfg);

// Closed-form roots of the mean EIF; the SE treats nuisances as fixed.
EstimateReport estimate_np_att_nem(const Dataset& d, const MarginalNuisance& m,
                                   const EstimatorOptions& opt = {});
EstimateReport estimate_np_att_nsm(const Dataset& d, const MarginalNuisance& m,
                                   const EstimatorOptions& opt = {});
// Fits the working models first; Bootstrap refits them on every resample.
EstimateReport estimate_np_att_nem(const Dataset& d, const MarginalConfig& cfg,
                                   const EstimatorOptions& opt = {});
EstimateReport estimate_np_att_nsm(const Dataset& d, const MarginalConfig& cfg,
                                   const EstimatorOptions& opt = {});

}  // namespace bespoke
