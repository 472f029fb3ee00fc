#pragma once

// Fixed-width text reports.

#include <string>

#include "rsmtune/campaign.hpp"

namespace rsmtune {

// Variable | Parameter | STD Error | t Value | P-value
std::string render_fit(const RegressionFit& fit);

// Reads a table produced by render_fit back; inference columns shown as "-"
// yield a fit without inference.
RegressionFit parse_fit_table(const std::string& text);

std::string render_descent(const CampaignState& state);

// Eigenvalues, classification, x_o in coded and actual units, predicted loss.
std::string render_canonical(const CampaignState& state);

std::string render_budget(const BudgetReport& budget);

std::string render_confirmation(const ConfirmationReport& report);

std::string render_status(const CampaignState& state);

// Budget, best-so-far and, once available, the canonical analysis and the
// confirmation comparison.
std::string render_report(const CampaignState& state);

}  // namespace rsmtune
