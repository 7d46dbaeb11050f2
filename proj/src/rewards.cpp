#include "factharness/rewards.hpp"

#include <optional>

#include "factharness/error.hpp"

namespace factharness::rewards {

using nli::NLILabel;
using textproc::AnalyzedReport;
using textproc::AnalyzedSentence;
using textproc::EntityKey;
using textproc::EntitySet;

namespace {

// Single harmonic-mean path shared by both rewards so the always-NEUTRAL
// degeneracy (fact_entnli == fact_ent) holds bitwise.
RewardValue fscore(double pr, double rc) {
  RewardValue out;
  out.value = pr + rc > 0.0 ? 2.0 * pr * rc / (pr + rc) : 0.0;
  return out;
}

// nullopt when neither side has entities (score 1.0 by convention), value
// when exactly one side is empty (score 0.0).
std::optional<RewardValue> empty_set_convention(const EntitySet& a, const EntitySet& b) {
  if (a.empty() && b.empty()) return RewardValue{1.0};
  if (a.empty() || b.empty()) return RewardValue{0.0};
  return std::nullopt;
}

}  // namespace

RewardValue fact_ent(const AnalyzedReport& gen, const AnalyzedReport& ref) {
  const EntitySet& eg = gen.entity_set;
  const EntitySet& er = ref.entity_set;
  if (auto conv = empty_set_convention(eg, er)) return *conv;
  std::size_t both = 0;
  for (const auto& e : eg) both += er.count(e);
  double pr = static_cast<double>(both) / static_cast<double>(eg.size());
  double rc = static_cast<double>(both) / static_cast<double>(er.size());
  return fscore(pr, rc);
}

NLILabel nli_e(const std::vector<AnalyzedSentence>& premises,
               const AnalyzedSentence& hypothesis, const nli::NLIBackend& backend,
               const simscore::EmbeddingProvider& provider) {
  if (premises.empty()) throw ValidationError("nli_e: empty premise list");
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < premises.size(); ++i) {
    double sim = simscore::bertscore(hypothesis.tokens, premises[i].tokens, provider).f1;
    if (sim > best_sim) {  // strict: ties keep the lowest index
      best_sim = sim;
      best = i;
    }
  }
  return backend.classify(premises[best], hypothesis);
}

namespace {

// Count of entities on one side accepted by φ. `own` holds the entities
// being scored, `other` is the counterpart report supplying premises and
// the membership set. NLI labels depend only on the hypothesis sentence,
// so they are cached per sentence.
std::size_t accepted_count(const AnalyzedReport& own, const AnalyzedReport& other,
                           const nli::NLIBackend& backend,
                           const simscore::EmbeddingProvider& provider,
                           const EntnliOptions& options) {
  std::vector<std::optional<NLILabel>> label_cache(own.sentences.size());
  auto label_for = [&](std::size_t sentence_idx) {
    auto& slot = label_cache[sentence_idx];
    if (!slot) {
      if (other.sentences.empty()) {
        slot = NLILabel::kNeutral;  // no counterpart premises: φ degenerates to membership
      } else {
        try {
          slot = nli_e(other.sentences, own.sentences[sentence_idx], backend, provider);
        } catch (const RemoteError&) {
          slot = options.remote_failure_fallback;
        } catch (const ProtocolError&) {
          slot = options.remote_failure_fallback;
        }
      }
    }
    return *slot;
  };

  std::size_t accepted = 0;
  for (const auto& e : own.entity_set) {
    bool member = other.entity_set.count(e) > 0;
    for (std::size_t si = 0; si < own.sentences.size(); ++si) {
      bool holds_entity = false;
      for (const auto& ent : own.sentences[si].entities) {
        if (ent.surface == e.first && ent.etype == e.second) {
          holds_entity = true;
          break;
        }
      }
      if (!holds_entity) continue;
      NLILabel label = label_for(si);
      if ((member && label != NLILabel::kContradiction) || label == NLILabel::kEntailment) {
        ++accepted;
        break;  // any occurrence passing φ accepts the entity
      }
    }
  }
  return accepted;
}

}  // namespace

RewardValue fact_entnli(const AnalyzedReport& gen, const AnalyzedReport& ref,
                        const nli::NLIBackend& backend,
                        const simscore::EmbeddingProvider& provider,
                        const EntnliOptions& options) {
  const EntitySet& eg = gen.entity_set;
  const EntitySet& er = ref.entity_set;
  if (auto conv = empty_set_convention(eg, er)) return *conv;
  std::size_t pr_count = accepted_count(gen, ref, backend, provider, options);
  std::size_t rc_count = accepted_count(ref, gen, backend, provider, options);
  double pr = static_cast<double>(pr_count) / static_cast<double>(eg.size());
  double rc = static_cast<double>(rc_count) / static_cast<double>(er.size());
  return fscore(pr, rc);
}

}  // namespace factharness::rewards
