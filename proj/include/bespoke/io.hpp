#pragma once

#include "bespoke/datamodel.hpp"
#include "bespoke/estimators.hpp"

#include <string>
#include <vector>

namespace bespoke {

// Header names y, a, z, s (cross-sectional) or y0, y1, a, z (panel); every
// other column is a covariate, in header order. Numbers use the C locale.
// Throws SchemaError on missing columns, ragged rows, non-numeric or
// non-finite cells and non-binary a, z, s.
Dataset read_csv(const std::string& path);
Dataset parse_csv(const std::string& text);

// Shortest round-trip formatting, so read_csv(write_csv(d)) reproduces d.
std::string format_csv(const Dataset& d);
void write_csv(const Dataset& d, const std::string& path);

// JSON array of {method, psi_hat, se, ci_lower, ci_upper, converged, warnings}.
std::string reports_json(const std::vector<EstimateReport>& reports);
// Columns Estimator, Estimate, CI_low, CI_high; first psi component.
std::string reports_csv(const std::vector<EstimateReport>& reports);

void write_text(const std::string& path, const std::string& text);

}  // namespace bespoke
