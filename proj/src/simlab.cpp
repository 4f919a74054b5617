#include "bespoke/simlab.hpp"

#include "bespoke/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace bespoke {

Dataset generate_dataset(std::size_t n, std::uint64_t seed, const DgpOptions& opt) {
  if (n == 0) throw ConfigError("n must be at least 1");
  auto rng = make_rng(seed, 0);
  std::bernoulli_distribution half(0.5);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto bern = [&](double p) { return std::bernoulli_distribution(p)(rng) ? 1.0 : 0.0; };
  const auto N = static_cast<Eigen::Index>(n);
  Eigen::VectorXd y(N), a(N), z(N), s(N);
  Eigen::MatrixXd c(N, 2);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double c1 = half(rng) ? 1.0 : 0.0;
    const double c2 = opt.c2 == C2Law::Normal ? noise(rng) : unif(rng);
    const double u = opt.include_u ? (half(rng) ? 1.0 : 0.0) : 0.0;
    const double si = bern(expit(-0.5 + c1 + 0.6 * c2 + 0.5 * c1 * c2));
    const double zi = bern(expit(0.25 * c1 - 0.25 * c2 + 0.5 * c1 * c2));
    const double ai =
        si == 1.0 ? bern(expit(1 - 1.5 * zi - 0.75 * c1 - 0.3 * c2 - 0.5 * c1 * c2 + u)) : 0.0;
    const double mean = 1 + (opt.null_effect ? 0.0 : ai) + u + 0.5 * c1 + 0.5 * c2 -
                        0.5 * c1 * c2 + zi * (1 - 0.4 * c1 - 0.4 * c2 + 0.5 * c1 * c2) +
                        si * (0.5 * c1 + 0.5 * c2 + 0.5 * c1 * c2);
    y(i) = mean + noise(rng);
    a(i) = ai;
    z(i) = zi;
    s(i) = si;
    c(i, 0) = c1;
    c(i, 1) = c2;
  }
  return Dataset(std::move(y), std::move(a), std::move(z), std::move(s), std::move(c), {"c1", "c2"});
}

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::ALL_CORRECT: return "ALL_CORRECT";
    case Setting::M1: return "M1";
    case Setting::M2: return "M2";
    case Setting::M3: return "M3";
    case Setting::M4: return "M4";
  }
  return "?";
}

Setting parse_setting(const std::string& s) {
  std::string u;
  for (char ch : s) u += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (Setting v : {Setting::ALL_CORRECT, Setting::M1, Setting::M2, Setting::M3, Setting::M4})
    if (u == setting_name(v)) return v;
  throw ConfigError("unknown setting '" + s + "'");
}

ModelConfig scenario_specs(Setting s) {
  const Terms full = parse_terms("1 + c1 + c2 + c1:c2");
  const Terms reduced = parse_terms("1 + c1 + c2");
  ModelConfig c = ModelConfig::from_basis(full);
  c.mu = parse_terms("1 + z + c1 + c2 + c1:c2");
  const bool tau = s == Setting::M1 || s == Setting::M3;
  const bool alpha = s == Setting::M1 || s == Setting::M2;
  const bool b0 = s == Setting::M2 || s == Setting::M3 || s == Setting::M4;
  const bool b1 = s == Setting::M2 || s == Setting::M4;
  const bool t = s == Setting::M3 || s == Setting::M4;
  if (tau) c.tau = reduced;
  if (alpha) c.alpha = reduced;
  if (b0) c.b0 = reduced;
  if (b1) c.b1 = reduced;
  if (t) c.t = times(reduced, 'z');
  return c;
}

std::string c2_law_name(C2Law l) { return l == C2Law::Normal ? "normal" : "uniform"; }

C2Law parse_c2_law(const std::string& s) {
  if (s == "normal") return C2Law::Normal;
  if (s == "uniform") return C2Law::Uniform;
  throw ConfigError("unknown C2 law '" + s + "' (normal or uniform)");
}

Terms benchmark_terms() { return parse_terms("1 + z + c1 + c2 + c1:c2"); }

const EstimatorSummary& SimResult::at(const std::string& name) const {
  for (const auto& e : estimators)
    if (e.estimator == name) return e;
  throw ConfigError("no estimator '" + name + "' in result");
}

namespace {

struct Draw {
  std::vector<double> psi, se;
  std::vector<char> ok;
};

}  // namespace

SimResult run_replications(const SimConfig& cfg) {
  if (cfg.n < 100) throw ConfigError("n must be at least 100");
  if (cfg.replications < 1) throw ConfigError("replications must be at least 1");
  if (cfg.estimators.empty()) throw ConfigError("no estimators requested");
  std::vector<std::optional<Method>> methods;
  bool need_mu = false;
  for (const auto& name : cfg.estimators) {
    if (name == kBenchmarkName) {
      methods.emplace_back(std::nullopt);
      continue;
    }
    Method m = parse_method(name);
    if (m == Method::MR_NSM) throw ConfigError("the simulation study covers NEM estimators only");
    need_mu = need_mu || m == Method::MR_EFF_NEM;
    methods.emplace_back(m);
  }
  const ModelConfig mc = scenario_specs(cfg.setting);
  const StructuralSpec spec;
  const double truth = cfg.null_effect ? 0.0 : 1.0;
  const std::size_t E = methods.size();
  const auto R = static_cast<std::size_t>(cfg.replications);
  std::vector<Draw> draws(R);

  auto run_one = [&](std::size_t r) {
    Draw& d = draws[r];
    d.psi.assign(E, NAN);
    d.se.assign(E, NAN);
    d.ok.assign(E, 0);
    const Dataset data = generate_dataset(cfg.n, cfg.seed ^ static_cast<std::uint64_t>(r + 1),
                                          DgpOptions{cfg.null_effect, cfg.include_u, cfg.c2});
    std::optional<NuisanceSet> nuis;
    try {
      PipelineOptions po;
      po.fit_mu = need_mu;
      nuis = fit_nuisance_pipeline(data, mc, spec, po);
    } catch (const std::exception&) {
    }
    EstimatorOptions eo;
    eo.variance = cfg.variance;
    eo.seed = cfg.seed ^ static_cast<std::uint64_t>(r + 1);
    for (std::size_t e = 0; e < E; ++e) {
      try {
        EstimateReport rep;
        if (!methods[e]) {
          rep = estimate_dr_g_benchmark(data, benchmark_terms(), eo);
        } else {
          if (!nuis) continue;
          rep = estimate(*methods[e], data, *nuis, eo);
        }
        if (!rep.converged || !std::isfinite(rep.psi(0)) || !std::isfinite(rep.se(0))) continue;
        d.psi[e] = rep.psi(0);
        d.se[e] = rep.se(0);
        d.ok[e] = 1;
      } catch (const std::exception&) {
      }
    }
  };

  const int W = std::max(1, cfg.parallel_workers);
  if (W == 1) {
    for (std::size_t r = 0; r < R; ++r) run_one(r);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < W; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t r = static_cast<std::size_t>(w); r < R; r += static_cast<std::size_t>(W)) run_one(r);
      });
    for (auto& t : pool) t.join();
  }

  SimResult out;
  out.setting = cfg.setting;
  out.config = cfg;
  const double q = 1.959963984540054;
  for (std::size_t e = 0; e < E; ++e) {
    EstimatorSummary s;
    s.estimator = cfg.estimators[e];
    double cover = 0;
    for (std::size_t r = 0; r < R; ++r) {
      if (!draws[r].ok[e]) {
        ++s.failures;
        continue;
      }
      const double p = draws[r].psi[e], se = draws[r].se[e];
      s.estimates.push_back(p);
      s.standard_errors.push_back(se);
      if (std::abs(p - truth) <= q * se) cover += 1;
    }
    s.completed = static_cast<int>(s.estimates.size());
    s.flagged = s.failures > 0.05 * static_cast<double>(R);
    if (s.completed > 0) {
      const double m = std::accumulate(s.estimates.begin(), s.estimates.end(), 0.0) / s.completed;
      s.bias = m - truth;
      s.mean_estimated_se =
          std::accumulate(s.standard_errors.begin(), s.standard_errors.end(), 0.0) / s.completed;
      s.coverage = cover / s.completed;
      if (s.completed > 1) {
        double ss = 0;
        for (double p : s.estimates) ss += (p - m) * (p - m);
        s.empirical_se = std::sqrt(ss / (s.completed - 1));
      }
    }
    out.estimators.push_back(std::move(s));
  }
  return out;
}

std::string sim_table_csv(const std::vector<SimResult>& results) {
  std::ostringstream os;
  os << "Model,Estimator,Bias,SE,ESE,Cov\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  for (const auto& r : results)
    for (const auto& e : r.estimators)
      os << setting_name(r.setting) << ',' << e.estimator << ',' << num(e.bias) << ','
         << (e.empirical_se ? num(*e.empirical_se) : std::string("NA")) << ','
         << num(e.mean_estimated_se) << ',' << num(e.coverage) << '\n';
  return os.str();
}

}  // namespace bespoke
