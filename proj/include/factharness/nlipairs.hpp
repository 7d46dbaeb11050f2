#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "factharness/corpus.hpp"
#include "factharness/nli.hpp"
#include "factharness/simscore.hpp"
#include "factharness/textproc.hpp"

namespace factharness::nlipairs {

enum class Rule { kE1, kN1, kN2, kN3, kN4, kC1 };

std::string to_string(Rule rule);
nli::NLILabel label_of(Rule rule);  // E1->ENTAILMENT, N*->NEUTRAL, C1->CONTRADICTION

struct NLIPair {
  textproc::AnalyzedSentence premise;     // s1
  textproc::AnalyzedSentence hypothesis;  // s2
  nli::NLILabel label = nli::NLILabel::kNeutral;
  Rule rule = Rule::kN1;
  double sim = 0.0;  // bertscore f1 between the two sentences
};

struct MatchOptions {
  double sim_threshold = 0.7;  // E1/N1 similarity gate
  // The displayed formula uses NE(s2) ⊆ NE(s1) for C1; the prose states the
  // opposite direction. Flip to follow the prose.
  bool c1_subset_s1_in_s2 = false;
};

struct RuleMatch {
  Rule rule;
  nli::NLILabel label;
  double sim;
};

// First match in the fixed order E1, N1, N2, N3, N4, C1; nullopt if none.
// NE(s) = the sentence's anatomy/observation entities.
std::optional<RuleMatch> match_rules(const textproc::AnalyzedSentence& s1,
                                     const textproc::AnalyzedSentence& s2,
                                     const textproc::Lexicon& lexicon,
                                     const simscore::EmbeddingProvider& provider,
                                     const MatchOptions& options = {});

struct Quotas {
  std::size_t e1 = 2000;
  std::size_t n1 = 500, n2 = 500, n3 = 500, n4 = 500;
  std::size_t c1 = 2000;

  std::size_t target(Rule rule) const;
  std::size_t total() const { return e1 + n1 + n2 + n3 + n4 + c1; }
};

struct GenerationResult {
  std::vector<NLIPair> pairs;
  std::vector<std::string> warnings;  // one per rule left short of quota
};

// Samples ordered sentence pairs uniformly without replacement from all
// sentences of the set's references, keeps rule matches until quotas are
// met or `budget` draws are spent. Deterministic given seed.
GenerationResult generate_training_pairs(const corpus::StudySet& set, const Quotas& quotas,
                                         const textproc::Lexicon& lexicon,
                                         const simscore::EmbeddingProvider& provider,
                                         std::uint64_t seed, std::size_t budget = 500000,
                                         const MatchOptions& options = {});

// Unlabeled ordered pair destined for external annotation; plain text, no
// lexicon analysis involved.
struct EvalCandidate {
  std::string premise;
  std::string hypothesis;
  double sim = 0.0;
};

struct EvalSampleResult {
  std::vector<EvalCandidate> pairs;  // 2n entries: each base pair and its swap
  std::vector<std::string> warnings;
};

// n base pairs with bertscore f1 >= 0.5, each emitted twice with premise
// and hypothesis swapped.
EvalSampleResult sample_eval_candidates(const corpus::StudySet& set, std::size_t n,
                                        const simscore::EmbeddingProvider& provider,
                                        std::uint64_t seed, std::size_t budget = 500000);

void save_pairs_jsonl(const std::vector<NLIPair>& pairs, const std::string& path);
void save_candidates_jsonl(const std::vector<EvalCandidate>& pairs, const std::string& path);

}  // namespace factharness::nlipairs
