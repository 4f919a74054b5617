// Batch front end: simulate, estimate and crossfit.
#include "bespoke/crossfit.hpp"
#include "bespoke/errors.hpp"
#include "bespoke/estimators.hpp"
#include "bespoke/io.hpp"
#include "bespoke/npatt.hpp"
#include "bespoke/simlab.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using nlohmann::json;
using namespace bespoke;

namespace {

// Flag values; unset optionals fall back to the config document.
struct Flags {
  std::string config;
  std::optional<std::string> input, output, mode, variance, beta, basis, setting, c2, dump_data;
  std::vector<std::string> estimators;
  std::optional<std::uint64_t> seed;
  std::optional<int> bootstrap, K, reps, workers;
  std::optional<std::size_t> n;
  bool null_effect = false, no_u = false, localized = false;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  try {
    json j = json::parse(f);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

template <class T>
T pick(const std::optional<T>& flag, const json& doc, const char* key, T fallback) {
  if (flag) return *flag;
  if (doc.contains(key)) return doc.at(key).get<T>();
  return fallback;
}

std::vector<std::string> pick_list(const std::vector<std::string>& flag, const json& doc, const char* key) {
  std::vector<std::string> out;
  if (!flag.empty()) {
    for (const auto& f : flag) {
      std::stringstream ss(f);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    }
    return out;
  }
  if (doc.contains(key)) return doc.at(key).get<std::vector<std::string>>();
  return out;
}

std::string default_basis(const Dataset& d) {
  std::string b = "1";
  for (std::size_t j = 0; j < d.p(); ++j) {
    const auto& names = d.covariate_names();
    b += " + " + (j < names.size() ? names[j] : "c" + std::to_string(j + 1));
  }
  return b;
}

ModelConfig model_config(const json& doc, const std::string& basis_text, const Dataset& d) {
  const auto& names = d.covariate_names();
  ModelConfig mc = ModelConfig::from_basis(parse_terms(basis_text, names));
  const json models = doc.value("models", json::object());
  const std::pair<const char*, Terms ModelConfig::*> keys[] = {
      {"tau", &ModelConfig::tau}, {"alpha", &ModelConfig::alpha}, {"rho", &ModelConfig::rho},
      {"e1", &ModelConfig::e1},   {"t", &ModelConfig::t},         {"b0", &ModelConfig::b0},
      {"b1", &ModelConfig::b1},   {"e5", &ModelConfig::e5},       {"pi", &ModelConfig::pi},
      {"q", &ModelConfig::q},     {"mu", &ModelConfig::mu}};
  for (const auto& [key, member] : keys)
    if (models.contains(key)) mc.*member = parse_terms(models.at(key).get<std::string>(), names);
  for (auto it = models.begin(); it != models.end(); ++it) {
    bool known = it.key() == "basis";
    for (const auto& k : keys) known = known || it.key() == k.first;
    if (!known) throw ConfigError("unknown model key '" + it.key() + "'");
  }
  if (doc.value("alpha_fit", std::string("reference")) == "joint") mc.alpha_fit = AlphaFit::Joint;
  mc.validate(d.p());
  return mc;
}

VarianceMode parse_variance(const std::string& v) {
  if (v == "stacked") return VarianceMode::Stacked;
  if (v == "fixed") return VarianceMode::FixedNuisance;
  if (v == "bootstrap") return VarianceMode::Bootstrap;
  throw ConfigError("unknown variance mode '" + v + "' (stacked, fixed or bootstrap)");
}

struct Common {
  json doc;
  Dataset data;
  ModelConfig models;
  StructuralSpec spec;
  EstimatorOptions opt;
  std::string basis;
  std::string output;
};

Common load_common(const Flags& f) {
  Common c;
  c.doc = load_config(f.config);
  const std::string input = pick<std::string>(f.input, c.doc, "input", "");
  if (input.empty()) throw ConfigError("no input CSV given");
  c.output = pick<std::string>(f.output, c.doc, "output", "");
  if (c.output.empty()) throw ConfigError("no output path given");
  c.data = read_csv(input);
  const ValidationReport check = validate(c.data);
  for (const auto& w : check.warnings) std::cerr << "warning: " << w << "\n";
  if (!check.ok) {
    std::string msg = check.errors.front();
    for (std::size_t k = 1; k < check.errors.size(); ++k) msg += "; " + check.errors[k];
    throw SchemaError(msg);
  }
  std::string basis = pick<std::string>(f.basis, c.doc, "basis", "");
  if (basis.empty() && c.doc.contains("models")) basis = c.doc["models"].value("basis", "");
  c.basis = basis.empty() ? default_basis(c.data) : basis;
  const auto& names = c.data.covariate_names();
  c.spec.beta_terms = parse_terms(pick<std::string>(f.beta, c.doc, "beta", "a"), names);
  const std::string mode = pick<std::string>(f.mode, c.doc, "mode", "NEM");
  if (mode != "NEM" && mode != "NSM") throw ConfigError("mode must be NEM or NSM");
  c.spec.restriction = mode == "NSM" ? Restriction::NSM : Restriction::NEM;
  c.spec.validate(c.data.p());
  if (!c.data.is_panel()) c.models = model_config(c.doc, c.basis, c.data);
  c.opt.variance = parse_variance(pick<std::string>(f.variance, c.doc, "variance", "stacked"));
  c.opt.seed = pick<std::uint64_t>(f.seed, c.doc, "seed", 1);
  c.opt.bootstrap_replicates = pick<int>(f.bootstrap, c.doc, "B", 200);
  return c;
}

bool is_method(const std::string& name) {
  try {
    parse_method(name);
    return true;
  } catch (const ConfigError&) {
    return false;
  }
}

int cmd_estimate(const Flags& f) {
  Common c = load_common(f);
  std::vector<std::string> names = pick_list(f.estimators, c.doc, "estimators");
  if (names.empty()) {
    if (c.data.is_panel())
      names = {c.spec.restriction == Restriction::NSM ? "DiD-NSM" : "DiD-NEM"};
    else
      names = default_sim_estimators();
    if (!c.data.is_panel() && c.spec.restriction == Restriction::NSM) names.push_back("MR-NSM");
  }
  bool need_nsm = false, need_mu = false, need_pipeline = false;
  for (const auto& n : names) {
    if (!is_method(n)) continue;
    need_pipeline = true;
    need_nsm = need_nsm || parse_method(n) == Method::MR_NSM;
    need_mu = need_mu || parse_method(n) == Method::MR_EFF_NEM;
  }
  std::optional<NuisanceSet> nuis;
  if (need_pipeline) {
    if (c.data.is_panel()) throw ConfigError("pipeline estimators need a cross-sectional file with s");
    PipelineOptions po;
    po.fit_nsm = need_nsm;
    po.fit_mu = need_mu;
    c.opt.pipeline = po;
    nuis = fit_nuisance_pipeline(c.data, c.models, c.spec, po);
  }
  const Terms basis = parse_terms(c.basis, c.data.covariate_names());
  std::vector<EstimateReport> reports;
  for (const auto& n : names) {
    EstimateReport r;
    if (is_method(n)) {
      r = estimate(parse_method(n), c.data, *nuis, c.opt);
    } else if (n == kBenchmarkName) {
      Terms l_terms = basis;
      l_terms.push_back(Term{{}, true, false, false});
      r = estimate_dr_g_benchmark(c.data, l_terms, c.opt);
    } else if (n == "DiD-NEM" || n == "DiD-NSM") {
      const DidConfig dc = DidConfig::from_basis(basis);
      r = n == "DiD-NEM" ? estimate_did_nem(c.data, dc, c.spec, c.opt)
                         : estimate_did_nsm(c.data, dc, c.spec, c.opt);
    } else if (n == "NP-ATT-NEM" || n == "NP-ATT-NSM") {
      MarginalConfig mc;
      mc.basis = basis;
      r = n == "NP-ATT-NEM" ? estimate_np_att_nem(c.data, mc, c.opt) : estimate_np_att_nsm(c.data, mc, c.opt);
    } else {
      throw ConfigError("unknown estimator '" + n + "'");
    }
    reports.push_back(std::move(r));
  }
  write_text(c.output + ".json", reports_json(reports));
  write_text(c.output + ".csv", reports_csv(reports));
  std::cout << reports_csv(reports);
  return 0;
}

int cmd_crossfit(const Flags& f) {
  Common c = load_common(f);
  if (c.data.is_panel()) throw ConfigError("crossfit needs a cross-sectional file");
  std::vector<std::string> names = pick_list(f.estimators, c.doc, "estimators");
  if (names.empty()) names = {"MR"};
  CrossfitOptions co;
  co.K = pick<int>(f.K, c.doc, "K", 5);
  co.seed = c.opt.seed;
  co.localized = f.localized || c.doc.value("localized", false);
  co.workers = pick<int>(f.workers, c.doc, "workers", 1);
  co.estimator = c.opt;
  std::vector<EstimateReport> reports;
  json folds = json::array();
  for (const auto& n : names) {
    const Method m = parse_method(n);
    PipelineOptions po;
    po.fit_nsm = m == Method::MR_NSM;
    po.fit_mu = m == Method::MR_EFF_NEM;
    ParametricLearner learner(c.models, c.spec, po);
    CrossfitReport r = crossfit_estimate(c.data, m, learner, co);
    json fp = json::array();
    for (const auto& p : r.fold_psi) fp.push_back(p(0));
    folds.push_back({{"method", r.report.method}, {"fold_psi", fp}, {"K", co.K}});
    reports.push_back(std::move(r.report));
  }
  json out = json::parse(reports_json(reports));
  for (std::size_t i = 0; i < out.size(); ++i) out[i]["folds"] = folds[i];
  write_text(c.output + ".json", out.dump(2) + "\n");
  write_text(c.output + ".csv", reports_csv(reports));
  std::cout << reports_csv(reports);
  return 0;
}

int cmd_simulate(const Flags& f) {
  const json doc = load_config(f.config);
  const std::string output = pick<std::string>(f.output, doc, "output", "");
  SimConfig base;
  base.n = pick<std::size_t>(f.n, doc, "n", base.n);
  base.replications = pick<int>(f.reps, doc, "reps", base.replications);
  base.seed = pick<std::uint64_t>(f.seed, doc, "seed", base.seed);
  base.parallel_workers = pick<int>(f.workers, doc, "workers", 1);
  base.null_effect = f.null_effect || doc.value("null_effect", false);
  base.include_u = !(f.no_u || !doc.value("include_u", true));
  base.c2 = parse_c2_law(pick<std::string>(f.c2, doc, "c2", "normal"));
  base.variance = parse_variance(pick<std::string>(f.variance, doc, "variance", "stacked"));
  const auto est = pick_list(f.estimators, doc, "estimators");
  if (!est.empty()) base.estimators = est;
  if (f.dump_data) {
    write_csv(generate_dataset(base.n, base.seed, DgpOptions{base.null_effect, base.include_u, base.c2}),
              *f.dump_data);
    if (output.empty()) return 0;
  }
  if (output.empty()) throw ConfigError("no output path given");
  const std::string setting = pick<std::string>(f.setting, doc, "setting", "all_correct");
  std::vector<Setting> settings;
  if (setting == "all")
    settings = {Setting::ALL_CORRECT, Setting::M1, Setting::M2, Setting::M3, Setting::M4};
  else
    settings = {parse_setting(setting)};
  std::vector<SimResult> results;
  json diag = json::array();
  for (Setting s : settings) {
    SimConfig cfg = base;
    cfg.setting = s;
    results.push_back(run_replications(cfg));
    for (const auto& e : results.back().estimators)
      diag.push_back({{"setting", setting_name(s)},
                      {"estimator", e.estimator},
                      {"bias", e.bias},
                      {"ese", e.empirical_se ? json(*e.empirical_se) : json(nullptr)},
                      {"se", e.mean_estimated_se},
                      {"coverage", e.coverage},
                      {"completed", e.completed},
                      {"failures", e.failures},
                      {"flagged", e.flagged}});
  }
  const json meta = {{"n", base.n},           {"reps", base.replications}, {"seed", base.seed},
                     {"c2", c2_law_name(base.c2)}, {"null_effect", base.null_effect},
                     {"include_u", base.include_u}, {"results", diag}};
  const std::string table = sim_table_csv(results);
  write_text(output + ".csv", table);
  write_text(output + ".json", meta.dump(2) + "\n");
  std::cout << table;
  return 0;
}

void error_exit_json(const char* kind, const std::string& msg) {
  std::cerr << json{{"error", kind}, {"message", msg}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bespoke instrumental variable estimation"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config document; flags override its fields");
    sub->add_option("--seed", f.seed, "Random seed");
    sub->add_option("--estimators", f.estimators, "Comma-separated estimator names");
    sub->add_option("--variance", f.variance, "stacked, fixed or bootstrap");
    sub->add_option("--workers", f.workers, "Worker threads");
    sub->add_option("--output,-o", f.output, "Output path prefix (.json and .csv are appended)");
  };
  auto data = [&](CLI::App* sub) {
    sub->add_option("--input,-i", f.input, "Input CSV");
    sub->add_option("--mode", f.mode, "NEM or NSM");
    sub->add_option("--beta", f.beta, "Structural model terms; each must involve the treatment column a");
    sub->add_option("--basis", f.basis, "Covariate basis for every nuisance model");
    sub->add_option("--B", f.bootstrap, "Bootstrap replicates");
  };
  CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo study");
  common(sim);
  sim->add_option("--setting", f.setting, "all_correct, m1..m4 or all");
  sim->add_option("--n", f.n, "Sample size");
  sim->add_option("--reps", f.reps, "Replications");
  sim->add_option("--c2", f.c2, "Law of C2: normal or uniform");
  sim->add_flag("--null", f.null_effect, "Generate under a null effect");
  sim->add_flag("--no-u", f.no_u, "Remove the unmeasured confounder");
  sim->add_option("--dump-data", f.dump_data, "Write one generated dataset to this CSV");
  CLI::App* est = app.add_subcommand("estimate", "Estimate on a CSV dataset");
  common(est);
  data(est);
  CLI::App* cf = app.add_subcommand("crossfit", "Cross-fitted estimation on a CSV dataset");
  common(cf);
  data(cf);
  cf->add_option("--K", f.K, "Number of folds");
  cf->add_flag("--localized", f.localized, "Seed nuisance fits with a full-sample estimate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (sim->parsed()) return cmd_simulate(f);
    if (est->parsed()) return cmd_estimate(f);
    if (cf->parsed()) return cmd_crossfit(f);
  } catch (const SchemaError& e) {
    error_exit_json("schema", e.what());
    return 3;
  } catch (const ConfigError& e) {
    error_exit_json("config", e.what());
    return 2;
  } catch (const json::exception& e) {
    error_exit_json("config", e.what());
    return 2;
  } catch (const std::exception& e) {
    error_exit_json("estimation", e.what());
    return 4;
  }
  return 1;
}
