#include "bespoke/datamodel.hpp"

#include "bespoke/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

namespace bespoke {

namespace {

bool is_binary(double v) { return v == 0.0 || v == 1.0; }

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

}  // namespace

Dataset::Dataset(const std::vector<Observation>& rows, std::vector<std::string> names) {
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index p = rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].c.size());
  y_.resize(n);
  a_.resize(n);
  z_.resize(n);
  s_.resize(n);
  c_.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(r.c.size()) != p)
      throw SchemaError("row " + std::to_string(i) + " has " + std::to_string(r.c.size()) +
                        " covariates, expected " + std::to_string(p));
    y_(i) = r.y;
    a_(i) = r.a;
    z_(i) = r.z;
    s_(i) = r.s;
    for (Eigen::Index j = 0; j < p; ++j) c_(i, j) = r.c[static_cast<std::size_t>(j)];
  }
  names_ = std::move(names);
  check();
}

Dataset::Dataset(Eigen::VectorXd y, Eigen::VectorXd a, Eigen::VectorXd z, Eigen::VectorXd s,
                 Eigen::MatrixXd c, std::vector<std::string> names)
    : y_(std::move(y)), a_(std::move(a)), z_(std::move(z)), s_(std::move(s)), c_(std::move(c)),
      names_(std::move(names)) {
  check();
}

Dataset Dataset::panel(Eigen::VectorXd y0, Eigen::VectorXd y1, Eigen::VectorXd a,
                       Eigen::VectorXd z, Eigen::MatrixXd c, std::vector<std::string> names) {
  Eigen::VectorXd s = Eigen::VectorXd::Ones(y1.size());
  Dataset d(std::move(y1), std::move(a), std::move(z), std::move(s), std::move(c),
            std::move(names));
  if (y0.size() != d.y_.size()) throw SchemaError("y0 and y1 differ in length");
  if (!y0.allFinite()) throw SchemaError("non-finite y0");
  d.y0_ = std::move(y0);
  return d;
}

void Dataset::check() {
  const auto n = y_.size();
  if (n == 0) throw SchemaError("dataset has no rows");
  if (a_.size() != n || z_.size() != n || s_.size() != n || c_.rows() != n)
    throw SchemaError("column lengths differ");
  if (!y_.allFinite() || !c_.allFinite()) throw SchemaError("non-finite outcome or covariate");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_binary(a_(i)) || !is_binary(z_(i)) || !is_binary(s_(i)))
      throw SchemaError("row " + std::to_string(i) + ": a, z, s must be 0 or 1");
  }
  if (!names_.empty() && names_.size() != static_cast<std::size_t>(c_.cols()))
    throw SchemaError("covariate name count does not match covariate columns");
  if (names_.empty())
    for (Eigen::Index j = 0; j < c_.cols(); ++j) names_.push_back("c" + std::to_string(j + 1));
  c_rows_ = c_;
}

const Eigen::VectorXd& Dataset::y0() const {
  if (!y0_) throw ConfigError("dataset is not a panel (no y0 column)");
  return *y0_;
}

Observation Dataset::row(std::size_t i) const {
  const auto k = static_cast<Eigen::Index>(i);
  Observation o;
  o.y = y_(k);
  o.a = static_cast<int>(a_(k));
  o.z = static_cast<int>(z_(k));
  o.s = static_cast<int>(s_(k));
  o.c.assign(c_rows_.row(k).data(), c_rows_.row(k).data() + c_.cols());
  return o;
}

RowView Dataset::view(std::size_t i) const {
  const auto k = static_cast<Eigen::Index>(i);
  return RowView{a_(k), z_(k), s_(k),
                 std::span<const double>(c_rows_.row(k).data(), static_cast<std::size_t>(c_.cols()))};
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::VectorXd y(m), a(m), z(m), s(m);
  Eigen::MatrixXd c(m, c_.cols());
  std::optional<Eigen::VectorXd> y0;
  if (y0_) y0 = Eigen::VectorXd(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(k)]);
    if (i < 0 || i >= y_.size()) throw ConfigError("subset index out of range");
    y(k) = y_(i);
    a(k) = a_(i);
    z(k) = z_(i);
    s(k) = s_(i);
    c.row(k) = c_.row(i);
    if (y0) (*y0)(k) = (*y0_)(i);
  }
  Dataset out(std::move(y), std::move(a), std::move(z), std::move(s), std::move(c), names_);
  out.y0_ = std::move(y0);
  return out;
}

Dataset Dataset::with_outcome(Eigen::VectorXd y) const {
  if (y.size() != y_.size()) throw SchemaError("outcome length mismatch");
  Dataset out = *this;
  out.y_ = std::move(y);
  if (!out.y_.allFinite()) throw SchemaError("non-finite outcome");
  return out;
}

ValidationReport validate(const Dataset& d) {
  ValidationReport rep;
  const auto n = static_cast<Eigen::Index>(d.n());
  std::size_t bad = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (d.s()(i) == 0.0 && d.a()(i) == 1.0) ++bad;
  if (bad > 0) {
    rep.ok = false;
    rep.errors.push_back(std::to_string(bad) + " rows have s=0 and a=1");
  }
  const double ns1 = d.s().sum();
  if (!d.is_panel() && (ns1 == 0.0 || ns1 == static_cast<double>(n))) {
    rep.ok = false;
    rep.errors.push_back("one of the s strata is empty");
  }
  for (int sv = 0; sv <= 1; ++sv) {
    if (d.is_panel() && sv == 0) continue;
    double n1 = 0, n0 = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d.s()(i) != sv) continue;
      (d.z()(i) == 1.0 ? n1 : n0) += 1.0;
    }
    if (n1 + n0 > 0 && (n1 == 0 || n0 == 0))
      rep.warnings.push_back("instrument level unused in stratum s=" + std::to_string(sv));
  }
  return rep;
}

double Term::value(const RowView& r) const {
  double v = 1.0;
  if (z) v *= r.z;
  if (s) v *= r.s;
  if (a) v *= r.a;
  for (int j : covariates) v *= r.c[static_cast<std::size_t>(j)];
  return v;
}

std::string Term::label(const std::vector<std::string>& names) const {
  std::vector<std::string> parts;
  if (a) parts.push_back("a");
  if (z) parts.push_back("z");
  if (s) parts.push_back("s");
  for (int j : covariates)
    parts.push_back(static_cast<std::size_t>(j) < names.size() ? names[static_cast<std::size_t>(j)]
                                                               : "c" + std::to_string(j + 1));
  if (parts.empty()) return "1";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += ":" + parts[i];
  return out;
}

Terms parse_terms(const std::string& text, const std::vector<std::string>& names) {
  Terms out;
  if (trim(text).empty()) return out;
  for (const auto& raw : split(text, '+')) {
    if (raw.empty()) throw ConfigError("empty term in '" + text + "'");
    Term t;
    if (raw == "1") {
      out.push_back(t);
      continue;
    }
    for (const auto& f : split(raw, ':')) {
      if (f.empty()) throw ConfigError("empty factor in term '" + raw + "'");
      if (f == "z" || f == "s" || f == "a") {
        bool& flag = f == "z" ? t.z : (f == "s" ? t.s : t.a);
        if (flag) throw ConfigError("factor '" + f + "' repeated in term '" + raw + "'");
        flag = true;
        continue;
      }
      auto it = std::find(names.begin(), names.end(), f);
      int idx = -1;
      if (it != names.end()) {
        idx = static_cast<int>(it - names.begin());
      } else if (f.size() > 1 && f[0] == 'c' &&
                 std::all_of(f.begin() + 1, f.end(), [](char ch) { return std::isdigit(ch); })) {
        idx = std::stoi(f.substr(1)) - 1;
        if (idx < 0 || (!names.empty() && static_cast<std::size_t>(idx) >= names.size()))
          throw ConfigError("covariate '" + f + "' out of range");
      } else {
        throw ConfigError("unknown factor '" + f + "'");
      }
      t.covariates.push_back(idx);
    }
    std::sort(t.covariates.begin(), t.covariates.end());
    if (std::find(out.begin(), out.end(), t) != out.end())
      throw ConfigError("duplicate term '" + raw + "'");
    out.push_back(t);
  }
  return out;
}

std::string format_terms(const Terms& terms, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) out += " + ";
    out += terms[i].label(names);
  }
  return out;
}

Terms times(const Terms& terms, char factor) {
  Terms out = terms;
  for (auto& t : out) {
    bool& flag = factor == 'z' ? t.z : (factor == 's' ? t.s : t.a);
    if (factor != 'z' && factor != 's' && factor != 'a') throw ConfigError("unknown factor");
    if (flag) throw ConfigError("factor already present");
    flag = true;
  }
  return out;
}

Terms drop_interaction(const Terms& terms, std::vector<int> covs) {
  std::sort(covs.begin(), covs.end());
  Terms out;
  for (const auto& t : terms) {
    std::set<int> have(t.covariates.begin(), t.covariates.end());
    bool all = std::all_of(covs.begin(), covs.end(), [&](int j) { return have.count(j) > 0; });
    if (!all) out.push_back(t);
  }
  return out;
}

void GLMSpec::validate(std::size_t p) const {
  if (terms.empty()) throw ConfigError("model has no terms");
  for (std::size_t i = 0; i < terms.size(); ++i) {
    for (int j : terms[i].covariates)
      if (j < 0 || static_cast<std::size_t>(j) >= p)
        throw ConfigError("term references covariate " + std::to_string(j + 1) + " but p=" +
                          std::to_string(p));
    for (std::size_t k = 0; k < i; ++k)
      if (terms[k] == terms[i]) throw ConfigError("duplicate term " + terms[i].label());
  }
}

Eigen::MatrixXd build_design(const Dataset& d, const Terms& terms, const FactorOverride& o) {
  const auto n = static_cast<Eigen::Index>(d.n());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(terms.size()));
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const Term& t = terms[k];
    auto col = X.col(static_cast<Eigen::Index>(k));
    col.setOnes();
    for (int j : t.covariates) {
      if (j < 0 || static_cast<std::size_t>(j) >= d.p())
        throw ConfigError("term references covariate c" + std::to_string(j + 1) + " but p=" +
                          std::to_string(d.p()));
      col.array() *= d.c().col(j).array();
    }
    if (t.z) {
      if (o.z) col *= *o.z;
      else col.array() *= d.z().array();
    }
    if (t.s) {
      if (o.s) col *= *o.s;
      else col.array() *= d.s().array();
    }
    if (t.a) {
      if (o.a) col *= *o.a;
      else col.array() *= d.a().array();
    }
  }
  return X;
}

Eigen::RowVectorXd design_row(const RowView& r, const Terms& terms) {
  Eigen::RowVectorXd x(static_cast<Eigen::Index>(terms.size()));
  for (std::size_t k = 0; k < terms.size(); ++k) {
    for (int j : terms[k].covariates)
      if (j < 0 || static_cast<std::size_t>(j) >= r.c.size())
        throw ConfigError("term references missing covariate");
    x(static_cast<Eigen::Index>(k)) = terms[k].value(r);
  }
  return x;
}

const Eigen::VectorXd& response(const Dataset& d, Variable v) {
  switch (v) {
    case Variable::Y: return d.y();
    case Variable::A: return d.a();
    case Variable::Z: return d.z();
    case Variable::S: return d.s();
  }
  throw ConfigError("unknown response");
}

}  // namespace bespoke
