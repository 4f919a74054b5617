#include "enumeration.hpp"

#include "doctest.h"

#include <cmath>

TEST_CASE("multiply robust equation has mean zero under each single correct set") {
  for (const auto& p : oracle::mr_patterns()) {
    CAPTURE(p.name);
    CHECK(std::abs(oracle::mr_nem_mean(p)) < 1e-12);
  }
}

TEST_CASE("multiply robust equation is biased when no set is correct") {
  CHECK(std::abs(oracle::mr_nem_mean({"none", false, false, false, false, false, false})) > 1e-3);
}

TEST_CASE("EIF1 has mean zero under each of the five sets") {
  const auto means = oracle::eif1_means();
  const auto pats = oracle::eif1_patterns();
  for (std::size_t i = 0; i < means.size(); ++i) {
    CAPTURE(pats[i].name);
    CHECK(std::abs(means[i]) < 1e-12);
  }
}

TEST_CASE("EIF2 has mean zero under each of the three sets") {
  const auto means = oracle::eif2_means();
  const auto pats = oracle::eif2_patterns();
  for (std::size_t i = 0; i < means.size(); ++i) {
    CAPTURE(pats[i].name);
    CHECK(std::abs(means[i]) < 1e-12);
  }
}

TEST_CASE("EIFs are biased when every working model is wrong") {
  const oracle::Law nem = oracle::nem_law(), nsm = oracle::nsm_law();
  const oracle::Correct none;
  CHECK(std::abs(oracle::mean_eif(nem, oracle::working_nuisance(nem, none), oracle::nem_psi_star(nem),
                                  bespoke::eif_nem)) > 1e-3);
  oracle::Correct prop_only;
  prop_only.prop = true;
  CHECK(std::abs(oracle::mean_eif(nsm, oracle::working_nuisance(nsm, prop_only), oracle::nsm_psi_star(nsm),
                                  bespoke::eif_nsm)) > 1e-3);
}

TEST_CASE("identification formulas recover the structural effect") {
  const oracle::Law L = oracle::nem_law();
  for (int c = 0; c < 2; ++c) CHECK(std::abs(L.beta(c) - (1.0 + 0.7 * c)) < 1e-12);
}

TEST_CASE("mean EIF1 is linear in psi with slope -1") {
  // With f_as at its population value the slope E(AS) / f_as is exactly one.
  const oracle::Law L = oracle::nem_law();
  oracle::Correct ok;
  ok.beta = ok.prop = ok.y_z0 = ok.t1 = true;
  const auto m = oracle::working_nuisance(L, ok);
  const double a = oracle::mean_eif(L, m, 0.3, bespoke::eif_nem);
  const double b = oracle::mean_eif(L, m, 1.1, bespoke::eif_nem);
  CHECK(std::abs((b - a) / 0.8 + 1) < 1e-12);
}
