#pragma once

#include "bespoke/datamodel.hpp"
#include "bespoke/estimators.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bespoke {

// Law of the continuous covariate C2: standard normal or uniform on (-1, 1).
enum class C2Law { Normal, Uniform };
std::string c2_law_name(C2Law l);
C2Law parse_c2_law(const std::string& s);

struct DgpOptions {
  bool null_effect = false;
  bool include_u = true;  // false removes the unmeasured confounder entirely
  C2Law c2 = C2Law::Normal;
};

// Simulation design with binary C1, continuous C2 and a hidden binary U.
// U is never exported.
Dataset generate_dataset(std::size_t n, std::uint64_t seed, const DgpOptions& opt = {});

enum class Setting { ALL_CORRECT, M1, M2, M3, M4 };
std::string setting_name(Setting s);
Setting parse_setting(const std::string& s);

// Correct models use 1 + c1 + c2 + c1:c2; a misspecified model omits c1:c2.
ModelConfig scenario_specs(Setting s);
Terms benchmark_terms();

inline const std::vector<std::string>& default_sim_estimators() {
  static const std::vector<std::string> names = {"TSLS", "g-Z", "g-S", "IPW", "MR", "MR-eff"};
  return names;
}
inline constexpr const char* kBenchmarkName = "DR-g";

struct SimConfig {
  Setting setting = Setting::ALL_CORRECT;
  std::size_t n = 5000;
  int replications = 500;
  std::uint64_t seed = 2024;
  std::vector<std::string> estimators = default_sim_estimators();
  int parallel_workers = 1;
  bool null_effect = false;
  bool include_u = true;
  C2Law c2 = C2Law::Normal;
  VarianceMode variance = VarianceMode::Stacked;
};

struct EstimatorSummary {
  std::string estimator;
  double bias = 0.0;
  std::optional<double> empirical_se;  // absent when fewer than two replicates succeed
  double mean_estimated_se = 0.0;
  double coverage = 0.0;
  int completed = 0;
  int failures = 0;
  bool flagged = false;  // more than 5% failures
  std::vector<double> estimates;
  std::vector<double> standard_errors;
};

struct SimResult {
  Setting setting = Setting::ALL_CORRECT;
  SimConfig config;
  std::vector<EstimatorSummary> estimators;

  const EstimatorSummary& at(const std::string& name) const;
};

SimResult run_replications(const SimConfig& cfg);

// Table with columns Model, Estimator, Bias, SE, ESE, Cov.
std::string sim_table_csv(const std::vector<SimResult>& results);

}  // namespace bespoke
