#include "bespoke/numkit.hpp"

#include "bespoke/errors.hpp"

#include <algorithm>
#include <cmath>

namespace bespoke {

Eigen::ArrayXd expit(const Eigen::ArrayXd& x) {
  return x.unaryExpr([](double v) { return expit(v); });
}

double FittedModel::linear_predictor(const RowView& r) const {
  return design_row(r, spec.terms).dot(coef);
}

double FittedModel::predict(const RowView& r) const {
  const double eta = linear_predictor(r);
  return spec.family == Family::Logistic ? expit(eta) : eta;
}

Eigen::VectorXd FittedModel::predict(const Dataset& d, const FactorOverride& o) const {
  Eigen::VectorXd eta = build_design(d, spec.terms, o) * coef;
  if (spec.family == Family::Logistic) return expit(eta.array()).matrix();
  return eta;
}

namespace {

struct Selected {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd w;
};

Selected select_rows(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  if (X.rows() != y.size() || (w.size() != 0 && w.size() != y.size()))
    throw ConfigError("design, response and weights differ in length");
  Selected s;
  if (w.size() == 0) {
    s.X = X;
    s.y = y;
    s.w = Eigen::VectorXd::Ones(y.size());
    return s;
  }
  const Eigen::Index m = (w.array() > 0).count();
  s.X.resize(m, X.cols());
  s.y.resize(m);
  s.w.resize(m);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (w(i) < 0 || !std::isfinite(w(i))) throw ConfigError("weights must be finite and >= 0");
    if (w(i) == 0) continue;
    s.X.row(k) = X.row(i);
    s.y(k) = y(i);
    s.w(k) = w(i);
    ++k;
  }
  return s;
}

void require_full_rank(const Eigen::MatrixXd& Xw) {
  if (Xw.rows() < Xw.cols())
    throw SingularDesignError("fewer rows (" + std::to_string(Xw.rows()) + ") than terms (" +
                              std::to_string(Xw.cols()) + ")");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  if (qr.rank() < Xw.cols())
    throw SingularDesignError("design has rank " + std::to_string(qr.rank()) + " < " +
                              std::to_string(Xw.cols()));
}

}  // namespace

RawFit fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  Selected s = select_rows(X, y, w);
  Eigen::VectorXd sw = s.w.array().sqrt().matrix();
  Eigen::MatrixXd Xw = sw.asDiagonal() * s.X;
  require_full_rank(Xw);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  RawFit out;
  out.coef = qr.solve(sw.cwiseProduct(s.y));
  return out;
}

RawFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                    const FitOptions& opt) {
  Selected s = select_rows(X, y, w);
  for (Eigen::Index i = 0; i < s.y.size(); ++i)
    if (s.y(i) != 0.0 && s.y(i) != 1.0) throw ConfigError("logistic response must be 0/1");
  require_full_rank(s.w.array().sqrt().matrix().asDiagonal() * s.X);
  const double wsum = s.w.sum();
  const double ybar = s.w.dot(s.y) / wsum;
  if (ybar == 0.0 || ybar == 1.0)
    throw SeparationError("logistic response is constant among the fitted rows");

  const double lo = opt.clip, hi = 1.0 - opt.clip;
  auto probs = [&](const Eigen::VectorXd& b) {
    return expit((s.X * b).array()).min(hi).max(lo).eval();
  };
  auto loglik = [&](const Eigen::ArrayXd& p) {
    return (s.w.array() * (s.y.array() * p.log() + (1.0 - s.y.array()) * (1.0 - p).log())).sum();
  };

  RawFit out;
  out.coef = Eigen::VectorXd::Zero(s.X.cols());
  Eigen::ArrayXd p = probs(out.coef);
  double ll = loglik(p);
  out.converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    Eigen::VectorXd grad = s.X.transpose() * (s.w.array() * (s.y.array() - p)).matrix();
    out.iterations = it;
    if ((grad / wsum).lpNorm<Eigen::Infinity>() <= opt.grad_tol) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd wt = (s.w.array() * p * (1.0 - p)).matrix();
    Eigen::MatrixXd H = s.X.transpose() * wt.asDiagonal() * s.X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) break;
    double t = 1.0;
    bool moved = false;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      Eigen::VectorXd cand = out.coef + t * step;
      Eigen::ArrayXd pc = probs(cand);
      double lc = loglik(pc);
      if (lc >= ll - 1e-12 * std::abs(ll)) {
        moved = true;
        out.coef = cand;
        p = pc;
        ll = lc;
        break;
      }
    }
    if (!moved) {
      Eigen::VectorXd g2 = s.X.transpose() * (s.w.array() * (s.y.array() - p)).matrix();
      out.converged = (g2 / wsum).lpNorm<Eigen::Infinity>() <= opt.grad_tol;
      break;
    }
  }
  if (!out.converged) {
    const bool pinned = (p <= lo).any() || (p >= hi).any();
    if (pinned)
      throw SeparationError("logistic fit did not converge with probabilities at the clip bounds");
  }
  return out;
}

FittedModel fit_glm(const Dataset& d, const GLMSpec& spec, const Eigen::VectorXd& weights,
                    const FitOptions& opt) {
  spec.validate(d.p());
  Eigen::MatrixXd X = build_design(d, spec.terms);
  const Eigen::VectorXd& y = response(d, spec.response);
  RawFit raw = spec.family == Family::Logistic ? fit_logistic(X, y, weights, opt)
                                               : fit_linear(X, y, weights);
  FittedModel m;
  m.spec = spec;
  m.coef = raw.coef;
  m.converged = raw.converged;
  m.iterations = raw.iterations;
  m.n_used = weights.size() == 0 ? d.n() : static_cast<std::size_t>((weights.array() > 0).count());
  return m;
}

namespace {

Eigen::MatrixXd forward_jacobian(const EstimatingFunction& f, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& fx, bool unit_step) {
  Eigen::MatrixXd J(fx.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xp = x;
    const double h = unit_step ? 1.0 : 1e-6 * std::max(1.0, std::abs(x(j)));
    xp(j) += h;
    J.col(j) = (f(xp) - fx) / h;
  }
  return J;
}

Eigen::VectorXd newton_step(const Eigen::MatrixXd& J, const Eigen::VectorXd& fx) {
  if (J.rows() != J.cols())
    throw ConfigError("estimating function returns " + std::to_string(J.rows()) +
                      " equations for " + std::to_string(J.cols()) + " parameters");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
  if (!lu.isInvertible() || !J.allFinite()) throw SingularDesignError("singular Jacobian");
  return lu.solve(fx);
}

}  // namespace

RootResult solve_estimating_equations(const EstimatingFunction& f, const Eigen::VectorXd& init,
                                      const RootOptions& opt) {
  RootResult r;
  r.x = init;
  Eigen::VectorXd fx = f(r.x);
  if (fx.size() != init.size())
    throw ConfigError("estimating function returns " + std::to_string(fx.size()) +
                      " equations for " + std::to_string(init.size()) + " parameters");
  r.residual = fx.lpNorm<Eigen::Infinity>();

  if (opt.linear) {
    Eigen::MatrixXd J = forward_jacobian(f, r.x, fx, true);
    for (int it = 0; it < 3; ++it) {
      r.iterations = it + 1;
      r.x -= newton_step(J, fx);
      fx = f(r.x);
      r.residual = fx.lpNorm<Eigen::Infinity>();
      if (r.residual <= opt.tol) break;
    }
    r.converged = r.residual <= opt.tol;
    return r;
  }

  for (int it = 0; it < opt.max_iter; ++it) {
    r.iterations = it;
    if (r.residual <= opt.tol) {
      r.converged = true;
      return r;
    }
    Eigen::MatrixXd J = forward_jacobian(f, r.x, fx, false);
    Eigen::VectorXd step = newton_step(J, fx);
    const double base = fx.norm();
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 50; ++h, t *= 0.5) {
      Eigen::VectorXd cand = r.x - t * step;
      Eigen::VectorXd fc = f(cand);
      if (fc.allFinite() && fc.norm() < base) {
        r.x = cand;
        fx = fc;
        improved = true;
        break;
      }
    }
    r.residual = fx.lpNorm<Eigen::Infinity>();
    if (!improved) break;
  }
  r.converged = r.residual <= opt.tol;
  return r;
}

Eigen::MatrixXd numeric_jacobian(const EstimatingFunction& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(x(j)));
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

VarianceReport sandwich_variance(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& jacobian) {
  const double n = static_cast<double>(scores.rows());
  if (scores.cols() != jacobian.rows() || jacobian.rows() != jacobian.cols())
    throw ConfigError("score and Jacobian dimensions disagree");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(jacobian);
  if (!lu.isInvertible()) throw SingularDesignError("singular Jacobian in sandwich");
  Eigen::MatrixXd Jinv = lu.inverse();
  Eigen::MatrixXd meat = scores.transpose() * scores / n;
  VarianceReport v;
  v.covariance = Jinv * meat * Jinv.transpose() / n;
  v.covariance = 0.5 * (v.covariance + v.covariance.transpose()).eval();
  v.se = v.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  v.method = "sandwich";
  return v;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

VarianceReport bootstrap_se(const DatasetEstimator& est, const Dataset& d, int replicates,
                            std::uint64_t seed, double max_fail_fraction) {
  if (replicates < 2) throw ConfigError("bootstrap needs at least 2 replicates");
  std::vector<Eigen::VectorXd> draws;
  int failed = 0;
  std::vector<std::size_t> idx(d.n());
  for (int b = 0; b < replicates; ++b) {
    auto rng = make_rng(seed, static_cast<std::uint64_t>(b));
    std::uniform_int_distribution<std::size_t> pick(0, d.n() - 1);
    for (auto& i : idx) i = pick(rng);
    try {
      Eigen::VectorXd v = est(d.subset(idx));
      if (!v.allFinite() || (!draws.empty() && v.size() != draws[0].size())) {
        ++failed;
        continue;
      }
      draws.push_back(std::move(v));
    } catch (const std::exception&) {
      ++failed;
    }
  }
  if (failed > max_fail_fraction * replicates || draws.size() < 2)
    throw BootstrapInstabilityError(std::to_string(failed) + " of " + std::to_string(replicates) +
                                    " bootstrap replicates failed");
  const auto k = draws[0].size();
  Eigen::MatrixXd D(static_cast<Eigen::Index>(draws.size()), k);
  for (std::size_t b = 0; b < draws.size(); ++b) D.row(static_cast<Eigen::Index>(b)) = draws[b];
  Eigen::MatrixXd centered = D.rowwise() - D.colwise().mean();
  VarianceReport v;
  v.covariance = centered.transpose() * centered / static_cast<double>(D.rows() - 1);
  v.se = v.covariance.diagonal().cwiseSqrt();
  v.method = "bootstrap";
  v.replicates = replicates;
  v.failed_replicates = failed;
  return v;
}

int StackedSystem::add_block(std::string name, int dim, BlockScores scores, bool linear) {
  if (dim <= 0) throw ConfigError("block '" + name + "' has no parameters");
  for (const auto& b : blocks_)
    if (b.name == name) throw ConfigError("duplicate block '" + name + "'");
  blocks_.push_back(Block{std::move(name), size_, dim, std::move(scores), linear});
  size_ += dim;
  return blocks_.back().offset;
}

int StackedSystem::offset(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b.offset;
  throw ConfigError("no block named '" + name + "'");
}

Eigen::MatrixXd StackedSystem::scores(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd U(static_cast<Eigen::Index>(n_), size_);
  for (const auto& b : blocks_) {
    Eigen::MatrixXd s = b.scores(theta);
    if (s.rows() != U.rows() || s.cols() != b.dim)
      throw ConfigError("block '" + b.name + "' returned a score of the wrong shape");
    U.middleCols(b.offset, b.dim) = s;
  }
  return U;
}

Eigen::MatrixXd StackedSystem::jacobian(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(size_, size_);
  std::vector<Eigen::VectorXd> base(blocks_.size());
  for (std::size_t bk = 0; bk < blocks_.size(); ++bk)
    base[bk] = blocks_[bk].scores(theta).colwise().mean().transpose();
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& owner = blocks_[bi];
    for (int j = owner.offset; j < owner.offset + owner.dim; ++j) {
      // Forward step relative to the parameter scale.
      const double h = 1e-6 * std::max(1.0, std::abs(theta(j)));
      Eigen::VectorXd tp = theta;
      tp(j) += h;
      for (std::size_t bk = bi; bk < blocks_.size(); ++bk) {
        const auto& b = blocks_[bk];
        Eigen::VectorXd up = b.scores(tp).colwise().mean().transpose();
        J.block(b.offset, j, b.dim, 1) = (up - base[bk]) / h;
      }
    }
  }
  return J;
}

VarianceReport StackedSystem::sandwich(const Eigen::VectorXd& theta) const {
  return sandwich_variance(scores(theta), jacobian(theta));
}

RootResult StackedSystem::solve_block(int bi, Eigen::VectorXd& theta, const RootOptions& opt) const {
  const auto& b = blocks_.at(static_cast<std::size_t>(bi));
  EstimatingFunction f = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd t = theta;
    t.segment(b.offset, b.dim) = x;
    return Eigen::VectorXd(b.scores(t).colwise().mean().transpose());
  };
  RootOptions o = opt;
  o.linear = o.linear || b.linear;
  RootResult r = solve_estimating_equations(f, theta.segment(b.offset, b.dim), o);
  theta.segment(b.offset, b.dim) = r.x;
  return r;
}

std::vector<RootResult> StackedSystem::solve_all(Eigen::VectorXd& theta, const RootOptions& opt) const {
  std::vector<RootResult> out;
  for (int b = 0; b < block_count(); ++b) out.push_back(solve_block(b, theta, opt));
  return out;
}

}  // namespace bespoke
