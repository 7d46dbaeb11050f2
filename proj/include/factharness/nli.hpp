#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "factharness/simscore.hpp"
#include "factharness/textproc.hpp"

namespace factharness::nli {

enum class NLILabel {
  kEntailment,
  kNeutral,
  kContradiction,
};

std::string to_string(NLILabel label);
NLILabel label_from_string(const std::string& s);  // throws ParseError

enum class BackendKind { kHeuristic, kRemote, kConstant };

struct NLIBackendConfig {
  BackendKind kind = BackendKind::kHeuristic;
  NLILabel constant_label = NLILabel::kNeutral;  // CONSTANT only
  std::string endpoint;                          // REMOTE only, e.g. http://localhost:8080
  double timeout_seconds = 5.0;
  int max_in_flight = 4;
};

class NLIBackend {
 public:
  virtual ~NLIBackend() = default;
  virtual NLILabel classify(const textproc::AnalyzedSentence& premise,
                            const textproc::AnalyzedSentence& hypothesis) const = 0;
  virtual BackendKind kind() const = 0;
};

// Deterministic rule backend; desk-scale stand-in for a trained NLI model.
// Rules in order (NE = anatomy/observation entities):
//   1. exactly one side negated and NE(hyp) ⊆ NE(prem) or NE(prem) ⊆ NE(hyp)
//      -> CONTRADICTION
//   2. negation parity, NE(hyp) ⊆ NE(prem), bertscore f1 >= 0.7 -> ENTAILMENT
//   3. an anatomy-modifier antonym pair links the sentences -> NEUTRAL
//   4. otherwise NEUTRAL
class HeuristicBackend : public NLIBackend {
 public:
  HeuristicBackend(textproc::Lexicon lexicon, simscore::EmbeddingProvider provider,
                   double entail_sim_threshold = 0.7);
  NLILabel classify(const textproc::AnalyzedSentence& premise,
                    const textproc::AnalyzedSentence& hypothesis) const override;
  BackendKind kind() const override { return BackendKind::kHeuristic; }

 private:
  textproc::Lexicon lexicon_;
  simscore::EmbeddingProvider provider_;
  double entail_sim_threshold_;
};

class ConstantBackend : public NLIBackend {
 public:
  explicit ConstantBackend(NLILabel label) : label_(label) {}
  NLILabel classify(const textproc::AnalyzedSentence&,
                    const textproc::AnalyzedSentence&) const override {
    return label_;
  }
  BackendKind kind() const override { return BackendKind::kConstant; }

 private:
  NLILabel label_;
};

// HTTP client for the POST /nli protocol. Throws RemoteError on transport
// failure (after one retry) and ProtocolError on malformed responses.
class RemoteBackend : public NLIBackend {
 public:
  explicit RemoteBackend(const NLIBackendConfig& config);
  NLILabel classify(const textproc::AnalyzedSentence& premise,
                    const textproc::AnalyzedSentence& hypothesis) const override;
  BackendKind kind() const override { return BackendKind::kRemote; }

  const std::string& endpoint() const { return endpoint_; }
  int max_in_flight() const { return max_in_flight_; }
  double timeout_seconds() const { return timeout_seconds_; }

 private:
  std::string endpoint_;
  double timeout_seconds_;
  int max_in_flight_;
};

std::unique_ptr<NLIBackend> make_backend(const NLIBackendConfig& config,
                                         const textproc::Lexicon& lexicon,
                                         const simscore::EmbeddingProvider& provider);

// Classifies pairs (premise, hypothesis) in input order, at most
// max-in-flight requests at a time, retrying each pair once. Any pair still
// failing raises a RemoteError naming the failed indices.
std::vector<NLILabel> remote_classify_batch(
    const std::vector<std::pair<textproc::AnalyzedSentence, textproc::AnalyzedSentence>>& pairs,
    const RemoteBackend& backend);

}  // namespace factharness::nli
