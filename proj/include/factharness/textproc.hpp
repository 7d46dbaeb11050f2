#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace factharness::textproc {

enum class EntityType {
  kAnatomy,
  kObservation,
  kAnatomyModifier,
  kUncertainty,
};

std::string to_string(EntityType t);
EntityType entity_type_from_string(const std::string& s);

// One recognized entity inside a sentence. `surface` is the lowercased
// space-joined span; `span` is [begin, end) token indices.
struct Entity {
  std::string surface;
  EntityType etype;
  std::size_t span_begin = 0;
  std::size_t span_end = 0;
};

using EntityKey = std::pair<std::string, EntityType>;
using EntitySet = std::set<EntityKey>;

struct AnalyzedSentence {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<Entity> entities;
  bool negated = false;
};

struct AnalyzedReport {
  std::vector<AnalyzedSentence> sentences;
  EntitySet entity_set;  // union of sentence entities, deduped by (surface, type)
};

// Term table, negation cues, antonym pairs, observation-keyword groups and
// the per-observation keyword lists used by the clinical labeler. The JSON
// layout is documented in data/lexicon.json.
class Lexicon {
 public:
  struct Term {
    std::vector<std::string> tokens;
    EntityType etype;
  };

  static Lexicon from_json_file(const std::string& path);
  static Lexicon from_json_string(const std::string& json_text);

  bool empty() const { return terms_.empty(); }

  // Longest term (token count) starting with `first`, or nullptr.
  const std::vector<Term>* terms_starting_with(const std::string& first) const;

  const std::vector<std::vector<std::string>>& negation_cues() const {
    return negation_cues_;
  }
  bool is_antonym_pair(const std::string& a, const std::string& b) const;

  // Ordered group ids ("G1", "G2", ...) with their member tokens.
  const std::vector<std::pair<std::string, std::set<std::string>>>& keyword_groups() const {
    return keyword_groups_;
  }
  std::optional<std::string> group_of_token(const std::string& token) const;

  // observation name -> keyword tokens, e.g. "pleural effusion" -> {effusion, effusions}
  const std::map<std::string, std::vector<std::string>>& observation_keywords() const {
    return observation_keywords_;
  }

 private:
  void validate() const;

  // keyed by first token; each bucket sorted by descending token count
  std::map<std::string, std::vector<Term>> terms_;
  std::vector<std::vector<std::string>> negation_cues_;
  std::set<std::pair<std::string, std::string>> antonyms_;  // stored both ways
  std::vector<std::pair<std::string, std::set<std::string>>> keyword_groups_;
  std::map<std::string, std::vector<std::string>> observation_keywords_;
};

std::vector<std::string> tokenize(const std::string& text);
std::vector<std::string> split_sentences(const std::string& text);

AnalyzedSentence analyze_sentence(const std::string& sentence_text, const Lexicon& lexicon);
AnalyzedReport analyze_report(const std::string& text, const Lexicon& lexicon);

bool antonym_of(const std::string& a, const std::string& b, const Lexicon& lexicon);

// Group of the first keyword token in sentence order; nullopt if none.
std::optional<std::string> keyword_group_of(const AnalyzedSentence& sentence,
                                            const Lexicon& lexicon);

// Entity views used by the pairing rules and the heuristic NLI backend.
// Rule conditions compare anatomy/observation entities; anatomy modifiers
// participate only through the antonym conditions.
EntitySet core_entities(const AnalyzedSentence& sentence);
std::set<EntityType> core_entity_types(const AnalyzedSentence& sentence);
std::set<std::string> anatomy_modifiers(const AnalyzedSentence& sentence);

}  // namespace factharness::textproc
