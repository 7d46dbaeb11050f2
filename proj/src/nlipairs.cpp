#include "factharness/nlipairs.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <unordered_set>

#include <json.hpp>

#include "factharness/error.hpp"
#include "factharness/rng.hpp"

namespace factharness::nlipairs {

using nli::NLILabel;
using textproc::AnalyzedSentence;
using textproc::EntitySet;

std::string to_string(Rule rule) {
  switch (rule) {
    case Rule::kE1: return "E1";
    case Rule::kN1: return "N1";
    case Rule::kN2: return "N2";
    case Rule::kN3: return "N3";
    case Rule::kN4: return "N4";
    case Rule::kC1: return "C1";
  }
  return "?";
}

NLILabel label_of(Rule rule) {
  switch (rule) {
    case Rule::kE1: return NLILabel::kEntailment;
    case Rule::kC1: return NLILabel::kContradiction;
    default: return NLILabel::kNeutral;
  }
}

std::size_t Quotas::target(Rule rule) const {
  switch (rule) {
    case Rule::kE1: return e1;
    case Rule::kN1: return n1;
    case Rule::kN2: return n2;
    case Rule::kN3: return n3;
    case Rule::kN4: return n4;
    case Rule::kC1: return c1;
  }
  return 0;
}

namespace {

bool subset_of(const EntitySet& inner, const EntitySet& outer) {
  return std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
}

bool modifier_antonym(const AnalyzedSentence& a, const AnalyzedSentence& b,
                      const textproc::Lexicon& lexicon) {
  auto ma = textproc::anatomy_modifiers(a);
  auto mb = textproc::anatomy_modifiers(b);
  for (const auto& x : ma)
    for (const auto& y : mb)
      if (lexicon.is_antonym_pair(x, y)) return true;
  return false;
}

// Rule conditions over already-extracted views; sim is pulled lazily since
// only E1/N1 gate on it and it is the expensive condition.
template <typename SimFn>
std::optional<RuleMatch> match_with(const AnalyzedSentence& s1, const AnalyzedSentence& s2,
                                    const textproc::Lexicon& lexicon, SimFn&& sim_fn,
                                    const MatchOptions& options) {
  EntitySet ne1 = textproc::core_entities(s1);
  EntitySet ne2 = textproc::core_entities(s2);
  const bool parity = s1.negated == s2.negated;
  const bool ne2_big = ne2.size() >= 2;

  std::optional<double> sim;
  auto get_sim = [&] {
    if (!sim) sim = sim_fn();
    return *sim;
  };
  auto emit = [&](Rule rule) { return RuleMatch{rule, label_of(rule), get_sim()}; };

  // E1
  if (parity && ne2_big && subset_of(ne2, ne1) && get_sim() >= options.sim_threshold) {
    return emit(Rule::kE1);
  }
  // N1: s1's entities a strict subset of s2's
  if (parity && ne2_big && ne1 != ne2 && subset_of(ne1, ne2) &&
      get_sim() >= options.sim_threshold) {
    return emit(Rule::kN1);
  }
  // N2
  if (parity && ne1 == ne2 && modifier_antonym(s1, s2, lexicon)) {
    return emit(Rule::kN2);
  }
  // N3: same entity types, disjoint entities
  if (parity && ne2_big &&
      textproc::core_entity_types(s1) == textproc::core_entity_types(s2)) {
    bool disjoint = true;
    for (const auto& e : ne1) {
      if (ne2.count(e)) {
        disjoint = false;
        break;
      }
    }
    if (disjoint) return emit(Rule::kN3);
  }
  // N4: same entities, different observation-keyword groups
  if (ne1 == ne2) {
    auto g1 = textproc::keyword_group_of(s1, lexicon);
    auto g2 = textproc::keyword_group_of(s2, lexicon);
    if (g1 && g2 && *g1 != *g2) return emit(Rule::kN4);
  }
  // C1
  const EntitySet& c1_inner = options.c1_subset_s1_in_s2 ? ne1 : ne2;
  const EntitySet& c1_outer = options.c1_subset_s1_in_s2 ? ne2 : ne1;
  if (!parity && ne2_big && subset_of(c1_inner, c1_outer)) {
    return emit(Rule::kC1);
  }
  return std::nullopt;
}

}  // namespace

std::optional<RuleMatch> match_rules(const AnalyzedSentence& s1, const AnalyzedSentence& s2,
                                     const textproc::Lexicon& lexicon,
                                     const simscore::EmbeddingProvider& provider,
                                     const MatchOptions& options) {
  auto sim_fn = [&] { return simscore::bertscore(s1.tokens, s2.tokens, provider).f1; };
  return match_with(s1, s2, lexicon, sim_fn, options);
}

namespace {

std::vector<AnalyzedSentence> all_sentences(const corpus::StudySet& set,
                                            const textproc::Lexicon& lexicon) {
  std::vector<AnalyzedSentence> out;
  for (const auto& study : set.studies) {
    auto report = textproc::analyze_report(study.reference, lexicon);
    for (auto& s : report.sentences) out.push_back(std::move(s));
  }
  return out;
}

// Ordered-pair sampler without replacement over i != j.
class PairSampler {
 public:
  PairSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}

  // false once the space is exhausted
  bool next(std::size_t& i, std::size_t& j) {
    const std::uint64_t space = static_cast<std::uint64_t>(n_) * (n_ - 1);
    if (seen_.size() >= space) return false;
    for (;;) {
      std::uint64_t a = rng_.below(n_);
      std::uint64_t b = rng_.below(n_ - 1);
      if (b >= a) ++b;  // uniform over j != i
      std::uint64_t key = a * n_ + b;
      if (seen_.insert(key).second) {
        i = static_cast<std::size_t>(a);
        j = static_cast<std::size_t>(b);
        return true;
      }
    }
  }

 private:
  std::size_t n_;
  Rng rng_;
  std::unordered_set<std::uint64_t> seen_;
};

}  // namespace

GenerationResult generate_training_pairs(const corpus::StudySet& set, const Quotas& quotas,
                                         const textproc::Lexicon& lexicon,
                                         const simscore::EmbeddingProvider& provider,
                                         std::uint64_t seed, std::size_t budget,
                                         const MatchOptions& options) {
  GenerationResult result;
  if (quotas.total() == 0) return result;

  auto sentences = all_sentences(set, lexicon);
  if (sentences.size() < 2) {
    throw ValidationError("pair generation needs at least 2 sentences, corpus has " +
                          std::to_string(sentences.size()));
  }
  std::vector<std::vector<std::vector<double>>> embedded(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    embedded[i] = provider.embed_tokens(sentences[i].tokens);
  }

  std::map<Rule, std::size_t> counts;
  const Rule all_rules[] = {Rule::kE1, Rule::kN1, Rule::kN2, Rule::kN3, Rule::kN4, Rule::kC1};
  auto quotas_met = [&] {
    for (Rule r : all_rules) {
      if (counts[r] < quotas.target(r)) return false;
    }
    return true;
  };

  PairSampler sampler(sentences.size(), seed);
  std::size_t i = 0, j = 0;
  for (std::size_t draw = 0; draw < budget && !quotas_met(); ++draw) {
    if (!sampler.next(i, j)) break;
    auto sim_fn = [&] {
      return simscore::bertscore_embedded(embedded[i], embedded[j]).f1;
    };
    auto match = match_with(sentences[i], sentences[j], lexicon, sim_fn, options);
    if (!match) continue;
    if (counts[match->rule] >= quotas.target(match->rule)) continue;  // quota already full
    ++counts[match->rule];
    result.pairs.push_back(NLIPair{sentences[i], sentences[j], match->label, match->rule,
                                   match->sim});
  }

  for (Rule r : all_rules) {
    if (counts[r] < quotas.target(r)) {
      result.warnings.push_back("rule " + to_string(r) + ": got " +
                                std::to_string(counts[r]) + " of " +
                                std::to_string(quotas.target(r)) + " pairs");
    }
  }
  return result;
}

EvalSampleResult sample_eval_candidates(const corpus::StudySet& set, std::size_t n,
                                        const simscore::EmbeddingProvider& provider,
                                        std::uint64_t seed, std::size_t budget) {
  if (n < 1) throw ValidationError("sample_eval_candidates needs n >= 1");
  EvalSampleResult result;

  std::vector<std::string> texts;
  std::vector<std::vector<std::vector<double>>> embedded;
  for (const auto& study : set.studies) {
    for (const auto& sentence : textproc::split_sentences(study.reference)) {
      texts.push_back(sentence);
      embedded.push_back(provider.embed_tokens(textproc::tokenize(sentence)));
    }
  }
  if (texts.size() < 2) {
    result.warnings.push_back("corpus too small: " + std::to_string(texts.size()) +
                              " sentences");
    return result;
  }

  PairSampler sampler(texts.size(), seed);
  std::size_t kept = 0;
  std::size_t i = 0, j = 0;
  for (std::size_t draw = 0; draw < budget && kept < n; ++draw) {
    if (!sampler.next(i, j)) break;
    double sim = simscore::bertscore_embedded(embedded[i], embedded[j]).f1;
    if (sim < 0.5) continue;
    result.pairs.push_back(EvalCandidate{texts[i], texts[j], sim});
    result.pairs.push_back(EvalCandidate{texts[j], texts[i], sim});
    ++kept;
  }
  if (kept < n) {
    result.warnings.push_back("sampled " + std::to_string(kept) + " of " + std::to_string(n) +
                              " base pairs before exhausting the budget");
  }
  return result;
}

void save_pairs_jsonl(const std::vector<NLIPair>& pairs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pairs file: " + path);
  for (const auto& p : pairs) {
    nlohmann::json rec = {{"premise", p.premise.text},
                          {"hypothesis", p.hypothesis.text},
                          {"label", nli::to_string(p.label)},
                          {"rule", to_string(p.rule)},
                          {"sim", p.sim}};
    out << rec.dump() << '\n';
  }
}

void save_candidates_jsonl(const std::vector<EvalCandidate>& pairs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write candidates file: " + path);
  for (const auto& p : pairs) {
    nlohmann::json rec = {{"premise", p.premise}, {"hypothesis", p.hypothesis}, {"sim", p.sim}};
    out << rec.dump() << '\n';
  }
}

}  // namespace factharness::nlipairs
