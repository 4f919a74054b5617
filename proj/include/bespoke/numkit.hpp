#pragma once

#include "bespoke/datamodel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace bespoke {

inline constexpr double kProbClip = 1e-6;

inline double expit(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double logit(double p) { return std::log(p / (1.0 - p)); }
Eigen::ArrayXd expit(const Eigen::ArrayXd& x);

struct FitOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;
  double clip = kProbClip;
};

struct FittedModel {
  GLMSpec spec;
  Eigen::VectorXd coef;
  bool converged = true;
  int iterations = 0;
  std::size_t n_used = 0;

  double linear_predictor(const RowView& r) const;
  // Mean response: expit of the linear predictor for the logistic family.
  double predict(const RowView& r) const;
  Eigen::VectorXd predict(const Dataset& d, const FactorOverride& o = {}) const;
};

struct RawFit {
  Eigen::VectorXd coef;
  bool converged = true;
  int iterations = 0;
};

// Rows with zero weight are excluded. Throws SingularDesignError on rank
// deficiency among the included rows.
RawFit fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w);
// IRLS with probabilities clipped to [clip, 1 - clip]. Converges when the
// sup-norm of the mean score is at most grad_tol. Throws SeparationError when
// the fit stalls with fitted probabilities pinned at the clip bounds.
RawFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                    const FitOptions& opt = {});

// `weights` of size n restricts and weights the rows; empty means all rows.
FittedModel fit_glm(const Dataset& d, const GLMSpec& spec, const Eigen::VectorXd& weights = {},
                    const FitOptions& opt = {});

struct RootOptions {
  double tol = 1e-9;
  int max_iter = 100;
  bool linear = false;
};

struct RootResult {
  Eigen::VectorXd x;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;  // sup-norm at x
};

using EstimatingFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Damped Newton with a forward-difference Jacobian (h = 1e-6 max(1, |x|)) and
// step halving. Linear systems are solved in one exact step. Throws
// SingularDesignError when the Jacobian is singular.
RootResult solve_estimating_equations(const EstimatingFunction& f, const Eigen::VectorXd& init,
                                      const RootOptions& opt = {});

// Central-difference Jacobian of f at x.
Eigen::MatrixXd numeric_jacobian(const EstimatingFunction& f, const Eigen::VectorXd& x);

struct VarianceReport {
  Eigen::MatrixXd covariance;
  Eigen::VectorXd se;
  std::string method;
  int replicates = 0;
  int failed_replicates = 0;
};

// scores: n x k per-row estimating function values at the root.
// jacobian: k x k mean derivative. covariance = J^-1 (U'U / n) J^-T / n.
VarianceReport sandwich_variance(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& jacobian);

using DatasetEstimator = std::function<Eigen::VectorXd(const Dataset&)>;

// Nonparametric bootstrap; replicate b draws from make_rng(seed, b). Failed
// replicates (exceptions or non-finite output) are dropped and counted; more
// than max_fail_fraction of failures raises BootstrapInstabilityError.
VarianceReport bootstrap_se(const DatasetEstimator& est, const Dataset& d, int replicates,
                            std::uint64_t seed, double max_fail_fraction = 0.2);

// Independent stream per (seed, index).
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index);

// Blocks of per-row estimating functions over a shared parameter vector. A
// block may read parameters of itself and of earlier blocks only; the
// Jacobian uses this to skip recomputing earlier blocks.
class StackedSystem {
 public:
  using BlockScores = std::function<Eigen::MatrixXd(const Eigen::VectorXd& theta)>;

  explicit StackedSystem(std::size_t n) : n_(n) {}

  // Returns the offset of the new block's parameters.
  int add_block(std::string name, int dim, BlockScores scores, bool linear = false);

  int size() const { return size_; }
  std::size_t n() const { return n_; }
  int offset(const std::string& name) const;
  int block_count() const { return static_cast<int>(blocks_.size()); }

  int block_offset(int b) const { return blocks_.at(static_cast<std::size_t>(b)).offset; }
  int block_dim(int b) const { return blocks_.at(static_cast<std::size_t>(b)).dim; }
  Eigen::MatrixXd block_scores(int b, const Eigen::VectorXd& theta) const {
    return blocks_.at(static_cast<std::size_t>(b)).scores(theta);
  }

  Eigen::MatrixXd scores(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta) const;
  VarianceReport sandwich(const Eigen::VectorXd& theta) const;

  // Solves block b for its own parameters with everything else held at theta.
  RootResult solve_block(int b, Eigen::VectorXd& theta, const RootOptions& opt = {}) const;
  // Solves every block in order.
  std::vector<RootResult> solve_all(Eigen::VectorXd& theta, const RootOptions& opt = {}) const;

 private:
  struct Block {
    std::string name;
    int offset;
    int dim;
    BlockScores scores;
    bool linear;
  };
  std::size_t n_;
  int size_ = 0;
  std::vector<Block> blocks_;
};

}  // namespace bespoke
