#pragma once

#include "bespoke/datamodel.hpp"
#include "bespoke/estimators.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace bespoke {

struct FoldPlan {
  int K = 1;
  std::vector<int> assignments;  // fold of each row
  std::uint64_t seed = 0;

  std::vector<std::size_t> members(int k) const;
  std::vector<std::size_t> complement(int k) const;
  std::vector<std::size_t> sizes() const;
};

// Uniform random partition with fold sizes differing by at most one.
FoldPlan make_folds(std::size_t n, int K, std::uint64_t seed);

// Trains nuisances on a subset. Must be deterministic and safe to call
// concurrently on different datasets.
class NuisanceLearner {
 public:
  virtual ~NuisanceLearner() = default;
  virtual NuisanceSet train(const Dataset& d, const std::optional<Eigen::VectorXd>& psi_hint) const = 0;
};

// The sequential parametric pipeline.
class ParametricLearner : public NuisanceLearner {
 public:
  ParametricLearner(ModelConfig config, StructuralSpec spec, PipelineOptions options = {});
  NuisanceSet train(const Dataset& d, const std::optional<Eigen::VectorXd>& psi_hint) const override;

 private:
  ModelConfig config_;
  StructuralSpec spec_;
  PipelineOptions options_;
};

struct CrossfitOptions {
  int K = 5;
  std::uint64_t seed = 1;
  // Two passes: a full-sample estimate seeds the nuisance fits of the second.
  bool localized = false;
  int workers = 1;
  EstimatorOptions estimator;  // variance mode is ignored
};

struct CrossfitReport {
  EstimateReport report;
  FoldPlan folds;
  std::vector<Eigen::VectorXd> fold_psi;
};

// K=1 trains and solves on the full sample and equals the fixed-nuisance
// estimator. For K>1 the fold solutions are averaged and the sandwich uses
// every row's out-of-fold nuisances at the averaged parameters.
CrossfitReport crossfit_estimate(const Dataset& d, Method method, const NuisanceLearner& learner,
                                 const CrossfitOptions& opt = {});

}  // namespace bespoke
