#include "bespoke/crossfit.hpp"

#include "bespoke/errors.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

namespace bespoke {

std::vector<std::size_t> FoldPlan::members(int k) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == k) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::complement(int k) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] != k) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::sizes() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(K), 0);
  for (int f : assignments) ++out[static_cast<std::size_t>(f)];
  return out;
}

FoldPlan make_folds(std::size_t n, int K, std::uint64_t seed) {
  if (K < 1) throw ConfigError("K must be at least 1");
  if (static_cast<std::size_t>(K) > n) throw ConfigError("K exceeds the number of rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, 0);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan p;
  p.K = K;
  p.seed = seed;
  p.assignments.assign(n, 0);
  for (std::size_t j = 0; j < n; ++j) p.assignments[order[j]] = static_cast<int>(j % static_cast<std::size_t>(K));
  return p;
}

ParametricLearner::ParametricLearner(ModelConfig config, StructuralSpec spec, PipelineOptions options)
    : config_(std::move(config)), spec_(std::move(spec)), options_(std::move(options)) {}

NuisanceSet ParametricLearner::train(const Dataset& d, const std::optional<Eigen::VectorXd>& psi_hint) const {
  PipelineOptions po = options_;
  if (psi_hint) po.psi_hint = psi_hint;
  return fit_nuisance_pipeline(d, config_, spec_, po);
}

namespace {

struct FoldFit {
  TargetScore ts;
  Eigen::VectorXd x;
  std::vector<std::size_t> rows;
  std::string error;
};

}  // namespace

CrossfitReport crossfit_estimate(const Dataset& d, Method method, const NuisanceLearner& learner,
                                 const CrossfitOptions& opt) {
  const std::string name = method_name(method) + " (cross-fit)";
  EstimatorOptions eo = opt.estimator;
  eo.variance = VarianceMode::FixedNuisance;
  CrossfitReport out;
  out.folds = make_folds(d.n(), opt.K, opt.seed);

  std::optional<Eigen::VectorXd> hint;
  if (opt.localized) hint = estimate(method, d, learner.train(d, std::nullopt), eo).psi;

  if (opt.K == 1) {
    out.report = estimate(method, d, learner.train(d, hint), eo);
    out.report.method = name;
    out.fold_psi.push_back(out.report.psi);
    return out;
  }

  const int K = opt.K;
  std::vector<FoldFit> fits(static_cast<std::size_t>(K));
  auto run = [&](int k) {
    FoldFit& f = fits[static_cast<std::size_t>(k)];
    try {
      const std::vector<std::size_t> train_idx = out.folds.complement(k);
      f.rows = out.folds.members(k);
      const NuisanceSet nuis = learner.train(d.subset(train_idx), hint);
      f.ts = target_score(method, d.subset(f.rows), nuis, eo);
      EstimatingFunction mean = [&f](const Eigen::VectorXd& p) {
        return Eigen::VectorXd(f.ts.rows(p).colwise().mean().transpose());
      };
      RootOptions ro;
      ro.linear = f.ts.linear;
      RootResult root = solve_estimating_equations(mean, f.ts.init, ro);
      if (!root.converged) throw ConvergenceError("target equation did not converge");
      f.x = root.x;
    } catch (const std::exception& e) {
      f.error = e.what();
    }
  };
  const int W = std::clamp(opt.workers, 1, K);
  if (W == 1) {
    for (int k = 0; k < K; ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < W; ++w)
      pool.emplace_back([&, w] {
        for (int k = w; k < K; k += W) run(k);
      });
    for (auto& t : pool) t.join();
  }
  for (int k = 0; k < K; ++k)
    if (!fits[static_cast<std::size_t>(k)].error.empty())
      throw ConvergenceError("cross-fit fold " + std::to_string(k) + " failed: " +
                             fits[static_cast<std::size_t>(k)].error);

  const auto dim = fits[0].x.size();
  Eigen::VectorXd xbar = Eigen::VectorXd::Zero(dim);
  for (const auto& f : fits) xbar += f.x / K;

  // Rows at the averaged parameters; the Jacobian is the size-weighted fold average.
  const auto n = static_cast<Eigen::Index>(d.n());
  Eigen::MatrixXd scores(n, dim);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::Index at = 0;
  for (const auto& f : fits) {
    const Eigen::MatrixXd rows = f.ts.rows(xbar);
    scores.middleRows(at, rows.rows()) = rows;
    at += rows.rows();
    EstimatingFunction mean = [&f](const Eigen::VectorXd& p) {
      return Eigen::VectorXd(f.ts.rows(p).colwise().mean().transpose());
    };
    J += numeric_jacobian(mean, xbar) * (static_cast<double>(f.rows.size()) / static_cast<double>(n));
    out.fold_psi.push_back(f.x.segment(f.ts.psi_index, f.ts.psi_dim));
  }
  VarianceReport v = sandwich_variance(scores, J);
  v.method = "cross-fit sandwich";
  out.report = make_report(name, xbar, v, fits[0].ts.psi_index, fits[0].ts.psi_dim, eo.level);
  return out;
}

}  // namespace bespoke
