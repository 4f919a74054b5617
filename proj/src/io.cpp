#include "bespoke/io.hpp"

#include "bespoke/errors.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace bespoke {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(const std::string& cell, std::size_t line, const std::string& column) {
  double v = 0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last)
    throw SchemaError("line " + std::to_string(line) + ", column '" + column + "': '" + cell +
                      "' is not a number");
  if (!std::isfinite(v))
    throw SchemaError("line " + std::to_string(line) + ", column '" + column + "': non-finite value");
  return v;
}

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

Dataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split(line);
      break;
    }
  }
  if (header.empty()) throw SchemaError("empty CSV");
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw SchemaError("empty column name at position " + std::to_string(j + 1));
    if (!col.emplace(header[j], j).second) throw SchemaError("duplicate column '" + header[j] + "'");
  }
  const bool panel = col.count("y0") && col.count("y1");
  const std::vector<std::string> required =
      panel ? std::vector<std::string>{"y0", "y1", "a", "z"} : std::vector<std::string>{"y", "a", "z", "s"};
  for (const auto& r : required)
    if (!col.count(r)) throw SchemaError("missing required column '" + r + "'");
  std::vector<std::size_t> cov;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const auto& h = header[j];
    const bool reserved = h == "a" || h == "z" || h == "s" || (panel ? h == "y0" || h == "y1" : h == "y");
    if (reserved) continue;
    if (panel && h == "y") throw SchemaError("panel files must not also carry 'y'");
    cov.push_back(j);
    names.push_back(h);
  }

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw SchemaError("line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                        " fields, expected " + std::to_string(header.size()));
    std::vector<double> v(header.size());
    for (std::size_t j = 0; j < cells.size(); ++j) v[j] = parse_number(cells[j], lineno, header[j]);
    for (const char* b : {"a", "z", "s"}) {
      auto it = col.find(b);
      if (it == col.end()) continue;
      const double x = v[it->second];
      if (x != 0.0 && x != 1.0)
        throw SchemaError("line " + std::to_string(lineno) + ", column '" + b + "' must be 0 or 1");
    }
    rows.push_back(std::move(v));
  }
  if (rows.empty()) throw SchemaError("CSV has no data rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  auto column = [&](const std::string& name) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rows[static_cast<std::size_t>(i)][col.at(name)];
    return v;
  };
  Eigen::MatrixXd c(n, static_cast<Eigen::Index>(cov.size()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (std::size_t k = 0; k < cov.size(); ++k)
      c(i, static_cast<Eigen::Index>(k)) = rows[static_cast<std::size_t>(i)][cov[k]];
  if (panel) return Dataset::panel(column("y0"), column("y1"), column("a"), column("z"), std::move(c), names);
  return Dataset(column("y"), column("a"), column("z"), column("s"), std::move(c), names);
}

Dataset read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SchemaError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

std::string format_csv(const Dataset& d) {
  std::vector<std::string> names = d.covariate_names();
  for (std::size_t j = names.size(); j < d.p(); ++j) names.push_back("c" + std::to_string(j + 1));
  std::ostringstream os;
  os << (d.is_panel() ? "y0,y1,a,z" : "y,a,z,s");
  for (const auto& nm : names) os << ',' << nm;
  os << '\n';
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (d.is_panel())
      os << fmt(d.y0()(k)) << ',' << fmt(d.y()(k)) << ',' << fmt(d.a()(k)) << ',' << fmt(d.z()(k));
    else
      os << fmt(d.y()(k)) << ',' << fmt(d.a()(k)) << ',' << fmt(d.z()(k)) << ',' << fmt(d.s()(k));
    for (std::size_t j = 0; j < d.p(); ++j) os << ',' << fmt(d.c()(k, static_cast<Eigen::Index>(j)));
    os << '\n';
  }
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << text;
  if (!f) throw ConfigError("write to '" + path + "' failed");
}

void write_csv(const Dataset& d, const std::string& path) { write_text(path, format_csv(d)); }

std::string reports_json(const std::vector<EstimateReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  auto vec = [](const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::isfinite(v(i)))
        a.push_back(v(i));
      else
        a.push_back(nullptr);
    }
    return a;
  };
  for (const auto& r : reports) {
    nlohmann::json j;
    j["method"] = r.method;
    j["psi_hat"] = vec(r.psi);
    j["se"] = vec(r.se);
    j["ci_lower"] = vec(r.ci_lower);
    j["ci_upper"] = vec(r.ci_upper);
    j["converged"] = r.converged;
    j["warnings"] = r.warnings;
    j["variance_method"] = r.variance_method;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string reports_csv(const std::vector<EstimateReport>& reports) {
  std::ostringstream os;
  os << "Estimator,Estimate,CI_low,CI_high\n";
  char buf[128];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f", r.psi(0), r.ci_lower(0), r.ci_upper(0));
    os << r.method << ',' << buf << '\n';
  }
  return os.str();
}

}  // namespace bespoke
