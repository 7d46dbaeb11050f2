#include "factharness/cliniceval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "factharness/error.hpp"

namespace factharness::cliniceval {

const std::array<std::string, kNumObservations>& observation_names() {
  static const std::array<std::string, kNumObservations> names = {
      "atelectasis", "cardiomegaly", "consolidation", "edema", "pleural effusion"};
  return names;
}

std::string to_string(Status s) {
  switch (s) {
    case Status::kPositive: return "POSITIVE";
    case Status::kNegative: return "NEGATIVE";
    case Status::kNotMentioned: return "NOT_MENTIONED";
  }
  return "NOT_MENTIONED";
}

ObservationStatus label_observations(const textproc::AnalyzedReport& report,
                                     const textproc::Lexicon& lexicon) {
  ObservationStatus out;
  out.fill(Status::kNotMentioned);
  const auto& keyword_map = lexicon.observation_keywords();
  const auto& names = observation_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = keyword_map.find(names[i]);
    if (it == keyword_map.end()) continue;
    const std::vector<std::string>& keywords = it->second;
    bool affirmed = false, negated = false;
    for (const auto& sentence : report.sentences) {
      bool mentioned = std::any_of(sentence.tokens.begin(), sentence.tokens.end(),
                                   [&](const std::string& tok) {
                                     return std::find(keywords.begin(), keywords.end(), tok) !=
                                            keywords.end();
                                   });
      if (!mentioned) continue;
      (sentence.negated ? negated : affirmed) = true;
    }
    if (affirmed) {
      out[i] = Status::kPositive;
    } else if (negated) {
      out[i] = Status::kNegative;
    }
  }
  return out;
}

MicroMetrics micro_metrics(const std::vector<ObservationStatus>& predicted,
                           const std::vector<ObservationStatus>& reference) {
  if (predicted.size() != reference.size()) {
    throw ValidationError("micro_metrics: " + std::to_string(predicted.size()) +
                          " predictions vs " + std::to_string(reference.size()) + " references");
  }
  std::size_t tp = 0, fp = 0, fn = 0, match = 0, cells = 0;
  for (std::size_t r = 0; r < predicted.size(); ++r) {
    for (std::size_t o = 0; o < kNumObservations; ++o) {
      const bool pred_pos = predicted[r][o] == Status::kPositive;
      const bool ref_pos = reference[r][o] == Status::kPositive;
      tp += pred_pos && ref_pos;
      fp += pred_pos && !ref_pos;
      fn += !pred_pos && ref_pos;
      match += predicted[r][o] == reference[r][o];
      ++cells;
    }
  }
  MicroMetrics m;
  m.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = (m.precision + m.recall > 0.0)
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  m.accuracy = cells ? static_cast<double>(match) / static_cast<double>(cells) : 0.0;
  return m;
}

double report_accuracy(const ObservationStatus& predicted, const ObservationStatus& reference) {
  std::size_t match = 0;
  for (std::size_t o = 0; o < kNumObservations; ++o) match += predicted[o] == reference[o];
  return static_cast<double>(match) / static_cast<double>(kNumObservations);
}

namespace {

// average fractional ranks, 1-based; ties share the mean of their positions
std::vector<double> fractional_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw ValidationError("spearman: length mismatch " + std::to_string(xs.size()) + " vs " +
                          std::to_string(ys.size()));
  }
  if (xs.size() < 2) throw ValidationError("spearman needs at least 2 points");
  const std::vector<double> rx = fractional_ranks(xs);
  const std::vector<double> ry = fractional_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw ValidationError("spearman undefined: an input has zero rank variance");
  }
  return sxy / std::sqrt(sxx * syy);
}

std::map<std::string, double> correlate_rewards(
    const std::map<std::string, std::vector<double>>& metric_values,
    const std::vector<double>& accuracy) {
  std::map<std::string, double> out;
  for (const auto& [name, values] : metric_values) {
    if (values.size() != accuracy.size()) {
      throw ValidationError("correlate_rewards: metric " + name + " has " +
                            std::to_string(values.size()) + " values for " +
                            std::to_string(accuracy.size()) + " reports");
    }
    out[name] = spearman(values, accuracy);
  }
  return out;
}

}  // namespace factharness::cliniceval
