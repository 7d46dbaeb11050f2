#include "factharness/textproc.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "factharness/error.hpp"

namespace factharness::textproc {

using nlohmann::json;

std::string to_string(EntityType t) {
  switch (t) {
    case EntityType::kAnatomy: return "ANATOMY";
    case EntityType::kObservation: return "OBSERVATION";
    case EntityType::kAnatomyModifier: return "ANATOMY_MODIFIER";
    case EntityType::kUncertainty: return "UNCERTAINTY";
  }
  return "?";
}

EntityType entity_type_from_string(const std::string& s) {
  if (s == "ANATOMY") return EntityType::kAnatomy;
  if (s == "OBSERVATION") return EntityType::kObservation;
  if (s == "ANATOMY_MODIFIER") return EntityType::kAnatomyModifier;
  if (s == "UNCERTAINTY") return EntityType::kUncertainty;
  throw ParseError("unknown entity type: " + s);
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> sentences;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    cur.push_back(c);
    bool terminal = (c == '.' || c == '?' || c == '!');
    bool at_break = terminal && (i + 1 == text.size() ||
                                 std::isspace(static_cast<unsigned char>(text[i + 1])));
    if (at_break) {
      sentences.push_back(cur);
      cur.clear();
    }
  }
  // leftover text without a terminal mark still forms a sentence
  if (!tokenize(cur).empty()) sentences.push_back(cur);
  std::erase_if(sentences, [](const std::string& s) { return tokenize(s).empty(); });
  return sentences;
}

Lexicon Lexicon::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

Lexicon Lexicon::from_json_string(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("lexicon JSON: ") + e.what());
  }
  Lexicon lex;
  if (!j.contains("terms") || !j["terms"].is_object()) {
    throw ParseError("lexicon JSON missing object field 'terms'");
  }
  for (const auto& [term, type_name] : j["terms"].items()) {
    Term t;
    t.tokens = tokenize(term);
    if (t.tokens.empty()) throw ParseError("lexicon term tokenizes to nothing: '" + term + "'");
    t.etype = entity_type_from_string(type_name.get<std::string>());
    lex.terms_[t.tokens.front()].push_back(std::move(t));
  }
  for (auto& [first, bucket] : lex.terms_) {
    std::sort(bucket.begin(), bucket.end(), [](const Term& a, const Term& b) {
      if (a.tokens.size() != b.tokens.size()) return a.tokens.size() > b.tokens.size();
      return a.tokens < b.tokens;
    });
  }
  for (const auto& cue : j.value("negation_cues", json::array())) {
    auto toks = tokenize(cue.get<std::string>());
    if (!toks.empty()) lex.negation_cues_.push_back(std::move(toks));
  }
  for (const auto& pair : j.value("antonyms", json::array())) {
    if (!pair.is_array() || pair.size() != 2) {
      throw ParseError("lexicon antonym entries must be 2-element arrays");
    }
    std::string a = pair[0].get<std::string>();
    std::string b = pair[1].get<std::string>();
    lex.antonyms_.insert({a, b});
    lex.antonyms_.insert({b, a});
  }
  // .items() keeps a reference into its json, so the defaulted lookups must
  // outlive the loops (a temporary here dies before the first iteration)
  const json groups = j.value("keyword_groups", json::object());
  for (const auto& [gid, words] : groups.items()) {
    std::set<std::string> members;
    for (const auto& w : words) members.insert(w.get<std::string>());
    lex.keyword_groups_.emplace_back(gid, std::move(members));
  }
  std::sort(lex.keyword_groups_.begin(), lex.keyword_groups_.end());
  const json observations = j.value("observations", json::object());
  for (const auto& [obs, words] : observations.items()) {
    std::vector<std::string> kws;
    for (const auto& w : words) kws.push_back(w.get<std::string>());
    lex.observation_keywords_[obs] = std::move(kws);
  }
  lex.validate();
  return lex;
}

void Lexicon::validate() const {
  for (const auto& [a, b] : antonyms_) {
    if (a == b) throw ValidationError("antonym pair is reflexive: " + a);
    if (!antonyms_.count({b, a})) throw ValidationError("antonym table not symmetric");
  }
  std::set<std::string> seen;
  for (const auto& [gid, members] : keyword_groups_) {
    for (const auto& w : members) {
      if (!seen.insert(w).second) {
        throw ValidationError("keyword groups overlap on '" + w + "'");
      }
    }
  }
}

const std::vector<Lexicon::Term>* Lexicon::terms_starting_with(const std::string& first) const {
  auto it = terms_.find(first);
  return it == terms_.end() ? nullptr : &it->second;
}

bool Lexicon::is_antonym_pair(const std::string& a, const std::string& b) const {
  return antonyms_.count({a, b}) > 0;
}

std::optional<std::string> Lexicon::group_of_token(const std::string& token) const {
  for (const auto& [gid, members] : keyword_groups_) {
    if (members.count(token)) return gid;
  }
  return std::nullopt;
}

namespace {

bool matches_at(const std::vector<std::string>& tokens, std::size_t pos,
                const std::vector<std::string>& seq) {
  if (pos + seq.size() > tokens.size()) return false;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (tokens[pos + i] != seq[i]) return false;
  }
  return true;
}

std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin,
                        std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace

AnalyzedSentence analyze_sentence(const std::string& sentence_text, const Lexicon& lexicon) {
  AnalyzedSentence s;
  s.text = sentence_text;
  s.tokens = tokenize(sentence_text);

  // greedy longest-match entity scan, non-overlapping
  std::size_t i = 0;
  while (i < s.tokens.size()) {
    const auto* bucket = lexicon.terms_starting_with(s.tokens[i]);
    bool matched = false;
    if (bucket != nullptr) {
      for (const auto& term : *bucket) {
        if (matches_at(s.tokens, i, term.tokens)) {
          Entity e;
          e.span_begin = i;
          e.span_end = i + term.tokens.size();
          e.surface = join_tokens(s.tokens, e.span_begin, e.span_end);
          e.etype = term.etype;
          s.entities.push_back(std::move(e));
          i += term.tokens.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) ++i;
  }

  bool cue_present = false;
  for (const auto& cue : lexicon.negation_cues()) {
    for (std::size_t pos = 0; pos + cue.size() <= s.tokens.size() && !cue_present; ++pos) {
      cue_present = matches_at(s.tokens, pos, cue);
    }
    if (cue_present) break;
  }
  bool uncertain = std::any_of(s.entities.begin(), s.entities.end(), [](const Entity& e) {
    return e.etype == EntityType::kUncertainty;
  });
  s.negated = cue_present || uncertain;
  return s;
}

AnalyzedReport analyze_report(const std::string& text, const Lexicon& lexicon) {
  if (lexicon.empty()) throw ValidationError("analyze_report: lexicon has no terms");
  AnalyzedReport report;
  for (const auto& sent : split_sentences(text)) {
    report.sentences.push_back(analyze_sentence(sent, lexicon));
  }
  for (const auto& s : report.sentences) {
    for (const auto& e : s.entities) {
      report.entity_set.insert({e.surface, e.etype});
    }
  }
  return report;
}

bool antonym_of(const std::string& a, const std::string& b, const Lexicon& lexicon) {
  return lexicon.is_antonym_pair(a, b);
}

std::optional<std::string> keyword_group_of(const AnalyzedSentence& sentence,
                                            const Lexicon& lexicon) {
  for (const auto& token : sentence.tokens) {
    if (auto gid = lexicon.group_of_token(token)) return gid;
  }
  return std::nullopt;
}

EntitySet core_entities(const AnalyzedSentence& sentence) {
  EntitySet out;
  for (const auto& e : sentence.entities) {
    if (e.etype == EntityType::kAnatomy || e.etype == EntityType::kObservation) {
      out.insert({e.surface, e.etype});
    }
  }
  return out;
}

std::set<EntityType> core_entity_types(const AnalyzedSentence& sentence) {
  std::set<EntityType> out;
  for (const auto& e : sentence.entities) {
    if (e.etype == EntityType::kAnatomy || e.etype == EntityType::kObservation) {
      out.insert(e.etype);
    }
  }
  return out;
}

std::set<std::string> anatomy_modifiers(const AnalyzedSentence& sentence) {
  std::set<std::string> out;
  for (const auto& e : sentence.entities) {
    if (e.etype == EntityType::kAnatomyModifier) out.insert(e.surface);
  }
  return out;
}

}  // namespace factharness::textproc
