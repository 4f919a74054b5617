#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bespoke {

struct Observation {
  double y = 0.0;
  int a = 0;
  int z = 0;
  int s = 0;
  std::vector<double> c;
};

// Read-only view of one row; used to evaluate terms at hypothetical (a, z, s).
struct RowView {
  double a = 0.0;
  double z = 0.0;
  double s = 0.0;
  std::span<const double> c;
};

// Column store. a, z, s are held as 0/1 doubles so they enter linear algebra
// directly. Panels carry the pre-period outcome in y0 and the post-period in y.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(const std::vector<Observation>& rows,
                   std::vector<std::string> covariate_names = {});
  Dataset(Eigen::VectorXd y, Eigen::VectorXd a, Eigen::VectorXd z, Eigen::VectorXd s,
          Eigen::MatrixXd c, std::vector<std::string> covariate_names = {});

  static Dataset panel(Eigen::VectorXd y0, Eigen::VectorXd y1, Eigen::VectorXd a,
                       Eigen::VectorXd z, Eigen::MatrixXd c,
                       std::vector<std::string> covariate_names = {});

  std::size_t n() const { return static_cast<std::size_t>(y_.size()); }
  std::size_t p() const { return static_cast<std::size_t>(c_.cols()); }
  bool is_panel() const { return y0_.has_value(); }

  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::VectorXd& a() const { return a_; }
  const Eigen::VectorXd& z() const { return z_; }
  const Eigen::VectorXd& s() const { return s_; }
  const Eigen::MatrixXd& c() const { return c_; }
  // Throws ConfigError when the dataset is not a panel.
  const Eigen::VectorXd& y0() const;
  const std::vector<std::string>& covariate_names() const { return names_; }

  Observation row(std::size_t i) const;
  RowView view(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> idx) const;
  Dataset with_outcome(Eigen::VectorXd y) const;

 private:
  void check();

  Eigen::VectorXd y_, a_, z_, s_;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> c_rows_;
  Eigen::MatrixXd c_;
  std::optional<Eigen::VectorXd> y0_;
  std::vector<std::string> names_;
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
};

// Reports rows violating S=0 => A=0, empty strata and unused instrument levels.
ValidationReport validate(const Dataset& d);

// A product of covariates, optionally multiplied by z, s and a.
// The empty product is the intercept.
struct Term {
  std::vector<int> covariates;  // sorted, repeats allowed for powers
  bool z = false;
  bool s = false;
  bool a = false;

  double value(const RowView& r) const;
  bool covariate_only() const { return !z && !s && !a; }
  std::string label(const std::vector<std::string>& names = {}) const;
  bool operator==(const Term& o) const = default;
};

using Terms = std::vector<Term>;

// Grammar: "1 + c1 + c2 + c1:c2 + z:c1". Names resolve against `names`
// (falling back to c1..cp); "z", "s", "a" are the design factors.
Terms parse_terms(const std::string& text, const std::vector<std::string>& names = {});
std::string format_terms(const Terms& terms, const std::vector<std::string>& names = {});

// Returns terms * factor (e.g. multiply a covariate basis by z).
Terms times(const Terms& terms, char factor);
// Drops terms mentioning every covariate in `covs` jointly.
Terms drop_interaction(const Terms& terms, std::vector<int> covs);

enum class Family { Gaussian, Logistic };
enum class Variable { Y, A, Z, S };

struct GLMSpec {
  Family family = Family::Gaussian;
  Variable response = Variable::Y;
  Terms terms;

  void validate(std::size_t p) const;
};

// Overrides the design factors for every row; unset fields keep observed values.
struct FactorOverride {
  std::optional<double> a, z, s;
};

Eigen::MatrixXd build_design(const Dataset& d, const Terms& terms, const FactorOverride& o = {});
Eigen::RowVectorXd design_row(const RowView& r, const Terms& terms);
const Eigen::VectorXd& response(const Dataset& d, Variable v);

}  // namespace bespoke
