#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "factharness/textproc.hpp"

namespace factharness::cliniceval {

// the five evaluated observations, fixed order
inline constexpr std::size_t kNumObservations = 5;
const std::array<std::string, kNumObservations>& observation_names();

enum class Status { kPositive, kNegative, kNotMentioned };
std::string to_string(Status s);

using ObservationStatus = std::array<Status, kNumObservations>;

// POSITIVE if any non-negated sentence mentions the observation, NEGATIVE if
// only negated sentences do, NOT_MENTIONED otherwise. Mentions come from the
// lexicon's per-observation keyword lists.
ObservationStatus label_observations(const textproc::AnalyzedReport& report,
                                     const textproc::Lexicon& lexicon);

struct MicroMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

// pooled over all (report, observation) cells; POSITIVE vs rest for p/r/f1,
// exact status match for accuracy; undefined p/r -> 0
MicroMetrics micro_metrics(const std::vector<ObservationStatus>& predicted,
                           const std::vector<ObservationStatus>& reference);

// fraction of the 5 observations whose status matches exactly
double report_accuracy(const ObservationStatus& predicted, const ObservationStatus& reference);

// Pearson correlation of average fractional ranks
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// one ρ per metric against per-report clinical accuracy
std::map<std::string, double> correlate_rewards(
    const std::map<std::string, std::vector<double>>& metric_values,
    const std::vector<double>& accuracy);

}  // namespace factharness::cliniceval
