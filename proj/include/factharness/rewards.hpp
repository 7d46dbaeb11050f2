#pragma once

#include <vector>

#include "factharness/nli.hpp"
#include "factharness/simscore.hpp"
#include "factharness/textproc.hpp"

namespace factharness::rewards {

// Reward in [0, 1]; the reporting layer multiplies by 100 for display.
struct RewardValue {
  double value = 0.0;
};

// Entity-overlap F-score: pr = |E_gen ∩ E_ref| / |E_gen|, rc symmetric,
// harmonic mean. Both sets empty -> 1.0; exactly one empty -> 0.0.
RewardValue fact_ent(const textproc::AnalyzedReport& gen, const textproc::AnalyzedReport& ref);

// Premise selection + classification: picks the premise maximizing
// bertscore f1 against the hypothesis (ties -> lowest index) and classifies
// that pair. Throws ValidationError when premises is empty.
nli::NLILabel nli_e(const std::vector<textproc::AnalyzedSentence>& premises,
                    const textproc::AnalyzedSentence& hypothesis,
                    const nli::NLIBackend& backend,
                    const simscore::EmbeddingProvider& provider);

struct EntnliOptions {
  // Substituted when a remote backend fails; keeps RL epochs alive.
  nli::NLILabel remote_failure_fallback = nli::NLILabel::kNeutral;
};

// fact_ent extended with an NLI veto/rescue per entity occurrence:
// φ(e) = 1 if (e in counterpart set and label != contradiction) or
// label == entailment, where label = nli_e(counterpart sentences, sentence
// containing e). An entity in several sentences is accepted if any
// occurrence passes. Empty counterpart -> label NEUTRAL. Normalization and
// empty-set conventions exactly as fact_ent.
RewardValue fact_entnli(const textproc::AnalyzedReport& gen, const textproc::AnalyzedReport& ref,
                        const nli::NLIBackend& backend,
                        const simscore::EmbeddingProvider& provider,
                        const EntnliOptions& options = {});

}  // namespace factharness::rewards
