#include "bespoke/crossfit.hpp"
#include "bespoke/errors.hpp"
#include "bespoke/simlab.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace bespoke;

namespace {

const Terms& basis() {
  static const Terms t = parse_terms("1 + c1 + c2 + c1:c2", {"c1", "c2"});
  return t;
}

// Ignores its training data.
class FixedLearner : public NuisanceLearner {
 public:
  explicit FixedLearner(NuisanceSet n) : n_(std::move(n)) {}
  NuisanceSet train(const Dataset&, const std::optional<Eigen::VectorXd>&) const override { return n_; }

 private:
  NuisanceSet n_;
};

}  // namespace

TEST_CASE("fold plans") {
  CHECK(make_folds(10, 1, 3).assignments == std::vector<int>(10, 0));
  CHECK(make_folds(10, 2, 3).sizes() == std::vector<std::size_t>{5, 5});
  auto s = make_folds(7, 3, 3).sizes();
  std::sort(s.begin(), s.end());
  CHECK(s == std::vector<std::size_t>{2, 2, 3});
  CHECK_THROWS_AS(make_folds(3, 4, 1), ConfigError);
  CHECK_THROWS_AS(make_folds(3, 0, 1), ConfigError);
  const FoldPlan p = make_folds(101, 5, 9);
  std::size_t total = 0;
  for (int k = 0; k < 5; ++k) {
    total += p.members(k).size();
    CHECK(p.members(k).size() + p.complement(k).size() == 101);
  }
  CHECK(total == 101);
}

TEST_CASE("K=1 is the full-sample fixed-nuisance estimator bit for bit") {
  const Dataset d = generate_dataset(2000, 4);
  const ParametricLearner learner(ModelConfig::from_basis(basis()), StructuralSpec{});
  CrossfitOptions o;
  o.K = 1;
  const CrossfitReport cf = crossfit_estimate(d, Method::MR_NEM, learner, o);
  EstimatorOptions eo;
  eo.variance = VarianceMode::FixedNuisance;
  const EstimateReport full = estimate(Method::MR_NEM, d, learner.train(d, std::nullopt), eo);
  CHECK(cf.report.psi(0) == full.psi(0));
  CHECK(cf.report.se(0) == full.se(0));
}

TEST_CASE("K=2 with fixed nuisances averages the two fold solves") {
  const Dataset d = generate_dataset(1500, 6);
  const NuisanceSet n = fit_nuisance_pipeline(d, ModelConfig::from_basis(basis()), StructuralSpec{});
  const FixedLearner learner(n);
  CrossfitOptions o;
  o.K = 2;
  o.seed = 13;
  const CrossfitReport cf = crossfit_estimate(d, Method::IPW, learner, o);
  EstimatorOptions eo;
  eo.variance = VarianceMode::FixedNuisance;
  double manual = 0;
  for (int k = 0; k < 2; ++k) manual += estimate(Method::IPW, d.subset(cf.folds.members(k)), n, eo).psi(0) / 2;
  CHECK(std::abs(cf.report.psi(0) - manual) < 1e-10);
}

TEST_CASE("cross-fit estimate is invariant to row order and fold relabeling") {
  const Dataset d = generate_dataset(1200, 7);
  const ParametricLearner learner(ModelConfig::from_basis(basis()), StructuralSpec{});
  CrossfitOptions o;
  o.K = 3;
  const CrossfitReport a = crossfit_estimate(d, Method::MR_NEM, learner, o);

  // Reverse the rows and carry the fold labels along; then rotate the labels.
  std::vector<std::size_t> rev(d.n());
  std::iota(rev.rbegin(), rev.rend(), 0);
  const Dataset r = d.subset(rev);
  double manual = 0;
  EstimatorOptions eo;
  eo.variance = VarianceMode::FixedNuisance;
  for (int k = 0; k < 3; ++k) {
    std::vector<std::size_t> in, out;
    for (std::size_t i = 0; i < r.n(); ++i) {
      const int label = (a.folds.assignments[rev[i]] + 1) % 3;
      (label == (k + 1) % 3 ? in : out).push_back(i);
    }
    const NuisanceSet n = learner.train(r.subset(out), std::nullopt);
    manual += estimate(Method::MR_NEM, r.subset(in), n, eo).psi(0) / 3;
  }
  CHECK(std::abs(a.report.psi(0) - manual) < 1e-8);
}

TEST_CASE("workers do not change the result") {
  const Dataset d = generate_dataset(1500, 8);
  const ParametricLearner learner(ModelConfig::from_basis(basis()), StructuralSpec{});
  CrossfitOptions o;
  o.K = 4;
  const double one = crossfit_estimate(d, Method::MR_NEM, learner, o).report.psi(0);
  o.workers = 3;
  CHECK(crossfit_estimate(d, Method::MR_NEM, learner, o).report.psi(0) == one);
}

TEST_CASE("oracle nuisances agree with the full-sample estimate") {
  const Dataset big = generate_dataset(20000, 77);
  const NuisanceSet oracle = fit_nuisance_pipeline(big, ModelConfig::from_basis(basis()), StructuralSpec{});
  const Dataset d = generate_dataset(4000, 78);
  CrossfitOptions o;
  o.K = 5;
  const CrossfitReport cf = crossfit_estimate(d, Method::MR_NEM, FixedLearner(oracle), o);
  const EstimateReport full = estimate(Method::MR_NEM, d, fit_nuisance_pipeline(d, ModelConfig::from_basis(basis()),
                                                                                StructuralSpec{}));
  CHECK(std::abs(cf.report.psi(0) - full.psi(0)) < 2 * full.se(0));
}

TEST_CASE("a failing fold is named") {
  class Failing : public NuisanceLearner {
   public:
    NuisanceSet train(const Dataset&, const std::optional<Eigen::VectorXd>&) const override {
      throw ConvergenceError("no");
    }
  };
  CrossfitOptions o;
  o.K = 2;
  try {
    crossfit_estimate(generate_dataset(300, 1), Method::MR_NEM, Failing{}, o);
    FAIL("expected an error");
  } catch (const ConvergenceError& e) {
    CHECK(std::string(e.what()).find("fold 0") != std::string::npos);
  }
}
