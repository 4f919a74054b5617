#include "bespoke/datamodel.hpp"
#include "bespoke/errors.hpp"

#include "doctest.h"

using namespace bespoke;

namespace {

Dataset three_rows() {
  return Dataset({{1.0, 0, 1, 1, {2.5, 0.5}}, {2.0, 1, 0, 1, {1.0, -1.0}}, {0.5, 0, 0, 0, {0.0, 3.0}}},
                 {"x", "w"});
}

}  // namespace

TEST_CASE("intercept design is a column of ones") {
  const Eigen::MatrixXd X = build_design(three_rows(), parse_terms("1"));
  CHECK(X.rows() == 3);
  CHECK(X.cols() == 1);
  CHECK(X.isOnes());
}

TEST_CASE("term values are products of their factors") {
  const double c1[1] = {2.5};
  CHECK(parse_terms("z:c1")[0].value(RowView{0, 1, 0, c1}) == doctest::Approx(2.5));
  const double c2[2] = {0.5, -1.0};
  CHECK(parse_terms("c1:c2")[0].value(RowView{0, 0, 0, c2}) == -0.5);
  CHECK(parse_terms("a:s:c1")[0].value(RowView{1, 0, 0, c1}) == 0.0);
}

TEST_CASE("term grammar resolves names and rejects bad input") {
  const Terms t = parse_terms("1 + x + x:w + z:w", {"x", "w"});
  REQUIRE(t.size() == 4);
  CHECK(t[0].covariates.empty());
  CHECK(t[2].covariates == std::vector<int>{0, 1});
  CHECK(t[3].z);
  CHECK(format_terms(t, {"x", "w"}) == "1 + x + x:w + z:w");
  CHECK_THROWS_AS(parse_terms("1 + nope", {"x"}), ConfigError);
  CHECK_THROWS_AS(parse_terms("1 + x + x", {"x"}), ConfigError);
  CHECK_THROWS_AS(parse_terms("z:z"), ConfigError);
  CHECK_THROWS_AS(parse_terms("1 + "), ConfigError);
}

TEST_CASE("design rejects out-of-range covariates") {
  CHECK_THROWS_AS(build_design(three_rows(), parse_terms("c3")), ConfigError);
}

TEST_CASE("times and drop_interaction") {
  const Terms base = parse_terms("1 + c1 + c2 + c1:c2");
  const Terms tz = times(base, 'z');
  for (const auto& t : tz) CHECK(t.z);
  CHECK_THROWS_AS(times(tz, 'z'), ConfigError);
  CHECK(drop_interaction(base, {0, 1}) == parse_terms("1 + c1 + c2"));
}

TEST_CASE("validate flags treated reference rows and degenerate instruments") {
  Dataset bad({{1.0, 1, 0, 0, {}}, {1.0, 0, 1, 1, {}}, {0.0, 0, 0, 1, {}}, {0.0, 0, 1, 0, {}}});
  CHECK_FALSE(validate(bad).ok);

  Dataset no_z({{1.0, 0, 0, 1, {}}, {1.0, 1, 0, 1, {}}, {0.0, 0, 1, 0, {}}, {0.0, 0, 0, 0, {}}});
  const auto rep = validate(no_z);
  CHECK(rep.ok);
  CHECK_FALSE(rep.warnings.empty());

  Dataset clean({{1.0, 0, 0, 1, {}}, {1.0, 1, 1, 1, {}}, {0.0, 0, 1, 0, {}}, {0.0, 0, 0, 0, {}}});
  CHECK(validate(clean).ok);
  CHECK(validate(clean).errors.empty());
}

TEST_CASE("dataset rejects non-binary factors and mismatched columns") {
  CHECK_THROWS_AS(Dataset({{1.0, 2, 0, 1, {}}}), SchemaError);
  CHECK_THROWS_AS(Dataset({{1.0, 0, 0, 1, {1.0}}, {1.0, 0, 0, 1, {}}}), SchemaError);
  CHECK_THROWS_AS(three_rows().y0(), ConfigError);
}

TEST_CASE("subset and overrides") {
  const Dataset d = three_rows();
  const std::size_t idx[2] = {2, 0};
  const Dataset s = d.subset(idx);
  CHECK(s.n() == 2);
  CHECK(s.y()(0) == 0.5);
  CHECK(s.c()(1, 0) == 2.5);
  const Eigen::MatrixXd X = build_design(d, parse_terms("z:x", {"x", "w"}), FactorOverride{{}, 1.0, {}});
  CHECK(X(1, 0) == 1.0);
}
