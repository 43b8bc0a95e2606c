#pragma once

#include <nlohmann/json.hpp>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cages/beliefs.hpp"
#include "cages/estimation.hpp"
#include "cages/metrics.hpp"

namespace cages {

// CSV schema (comma, dot decimal, UTF-8, mandatory header):
//   subject_id,trial_id,p_a,p_b,draws,marked,prior,choice   (choice mode)
//   subject_id,trial_id,p_a,p_b,draws,marked,prior,report   (report mode)
// Rows are grouped by subject in file order; trial order within a subject is
// preserved. Priors of exactly 0/1 load fine; fitting rejects them later.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Dataset load_choice_dataset(const std::string& path);
std::vector<ReportTrial> load_report_dataset(const std::string& path);
void write_choice_dataset(const Dataset& data, const std::string& path);
void write_report_dataset(std::span<const ReportTrial> reports, const std::string& path);

// Results JSON: top-level model, estimates, std_errors, loglik, aic, lambda,
// assignments, tests, diagnostics. Field order is fixed for diffing; doubles
// round-trip exactly.
nlohmann::ordered_json fit_to_json(const FitResult& fit);
FitResult fit_from_json(const nlohmann::ordered_json& j);
void write_fit_json(const FitResult& fit, const std::string& path);
FitResult read_fit_json(const std::string& path);

nlohmann::ordered_json scorecard_to_json(const ScoreCard& card);
nlohmann::ordered_json belief_fit_to_json(const BeliefFit& fit);

// Two-column CSV "prior,loss".
void write_loss_curve_csv(std::span<const LossPoint> curve, const std::string& path);

std::string format_double(double v);  // shortest round-trip representation

}  // namespace cages
