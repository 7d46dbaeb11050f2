#include "factharness/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "factharness/error.hpp"
#include "factharness/rng.hpp"
#include "factharness/textproc.hpp"

namespace factharness::corpus {

using nlohmann::json;

std::vector<std::string> build_vocab(const std::vector<Study>& studies) {
  std::set<std::string> seen;
  for (const auto& s : studies) {
    for (const auto& t : textproc::tokenize(s.reference)) seen.insert(t);
  }
  std::vector<std::string> vocab = {kPadToken, kBosToken, kEosToken};
  vocab.insert(vocab.end(), seen.begin(), seen.end());
  return vocab;
}

std::vector<std::size_t> encode_reference(const std::string& text,
                                          const std::vector<std::string>& vocab) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index[vocab[i]] = i;
  std::vector<std::size_t> ids = {kBosId};
  for (const auto& t : textproc::tokenize(text)) {
    auto it = index.find(t);
    if (it == index.end()) throw ValidationError("token not in vocab: \"" + t + "\"");
    ids.push_back(it->second);
  }
  ids.push_back(kEosId);
  return ids;
}

std::string decode_ids(const std::vector<std::size_t>& ids,
                       const std::vector<std::string>& vocab) {
  std::string out;
  for (std::size_t id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (id >= vocab.size()) throw ValidationError("token id out of vocab: " + std::to_string(id));
    if (!out.empty()) out += ' ';
    out += vocab[id];
  }
  return out;
}

namespace {

Grid grid_from_json(const json& jgrid, std::size_t lineno) {
  auto fail = [&](const std::string& why) -> ParseError {
    return ParseError("line " + std::to_string(lineno) + ": bad image grid: " + why);
  };
  if (!jgrid.is_array() || jgrid.empty()) throw fail("expected non-empty row array");
  Grid g;
  g.rows = jgrid.size();
  for (const auto& jrow : jgrid) {
    if (!jrow.is_array() || jrow.empty()) throw fail("expected non-empty column array");
    if (g.cols == 0) g.cols = jrow.size();
    if (jrow.size() != g.cols) throw fail("ragged columns");
    for (const auto& jcell : jrow) {
      if (!jcell.is_array() || jcell.empty()) throw fail("expected non-empty feature vector");
      if (g.depth == 0) g.depth = jcell.size();
      if (jcell.size() != g.depth) throw fail("ragged feature vectors");
      for (const auto& v : jcell) {
        if (!v.is_number()) throw fail("non-numeric feature");
        g.data.push_back(v.get<double>());
      }
    }
  }
  return g;
}

}  // namespace

StudySet load_reports(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report file: " + path);
  StudySet set;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string() ||
        !rec.contains("findings") || !rec["findings"].is_string()) {
      throw ParseError("line " + std::to_string(lineno) +
                       ": record needs string fields \"id\" and \"findings\"");
    }
    Study study;
    study.id = rec["id"].get<std::string>();
    study.reference = rec["findings"].get<std::string>();
    if (textproc::tokenize(study.reference).empty()) continue;  // empty findings: skip
    if (!ids.insert(study.id).second) {
      throw ValidationError("line " + std::to_string(lineno) + ": duplicate id \"" +
                            study.id + "\"");
    }
    if (rec.contains("images") && rec["images"].is_array() && !rec["images"].empty()) {
      for (const auto& jgrid : rec["images"]) {
        Grid g = grid_from_json(jgrid, lineno);
        if (!study.images.empty() && (g.rows != study.images[0].rows ||
                                      g.cols != study.images[0].cols ||
                                      g.depth != study.images[0].depth)) {
          throw ParseError("line " + std::to_string(lineno) + ": grids differ in shape");
        }
        study.images.push_back(std::move(g));
      }
    } else {
      for (std::size_t k = 0; k < options.images_per_study; ++k) {
        study.images.push_back(Grid::zeros(options.rows, options.cols, options.depth));
      }
    }
    set.studies.push_back(std::move(study));
  }
  set.vocab = build_vocab(set.studies);
  return set;
}

void save_reports(const StudySet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report file: " + path);
  for (const auto& s : set.studies) {
    json images = json::array();
    for (const auto& g : s.images) {
      json jg = json::array();
      for (std::size_t r = 0; r < g.rows; ++r) {
        json jr = json::array();
        for (std::size_t c = 0; c < g.cols; ++c) {
          json jc = json::array();
          for (std::size_t d = 0; d < g.depth; ++d) jc.push_back(g.at(r, c, d));
          jr.push_back(std::move(jc));
        }
        jg.push_back(std::move(jr));
      }
      images.push_back(std::move(jg));
    }
    json rec = {{"id", s.id}, {"findings", s.reference}, {"images", std::move(images)}};
    out << rec.dump() << '\n';
  }
}

std::vector<Finding> default_findings(std::size_t depth) {
  auto signature = [depth](std::size_t idx) {
    std::vector<double> sig(depth, 0.0);
    sig[idx % depth] = 3.0;
    sig[(2 * idx + 1) % depth] += 1.5;
    return sig;
  };
  std::vector<Finding> findings;
  findings.push_back({"atelectasis",
                      signature(0),
                      {"There is atelectasis at the left lung base.",
                       "Left basilar subsegmental atelectasis.",
                       "Right basilar subsegmental atelectasis.",
                       "There is minor atelectasis at the right lung base."},
                      "atelectasis"});
  findings.push_back({"cardiomegaly",
                      signature(1),
                      {"The heart is enlarged.", "The heart is mildly enlarged.",
                       "There is moderate cardiomegaly.",
                       "The cardiac silhouette is enlarged."},
                      "cardiomegaly"});
  findings.push_back({"consolidation",
                      signature(2),
                      {"There is focal consolidation in the right lower lobe.",
                       "Patchy consolidation is seen in the left lower lobe.",
                       "There is dense consolidation in the right lower lobe."},
                      "consolidation"});
  findings.push_back({"edema",
                      signature(3),
                      {"There is mild pulmonary edema.", "Moderate pulmonary edema is present.",
                       "There is mild interstitial pulmonary edema."},
                      "pulmonary edema"});
  findings.push_back({"pleural effusion",
                      signature(4),
                      {"There is a small right pleural effusion.",
                       "There is a small left pleural effusion.",
                       "A moderate right pleural effusion is seen.",
                       "There is a small right pleural effusion at the lung base."},
                      "pleural effusion"});
  return findings;
}

namespace {

// Keyword-free sentences: they never move an observation label and exist to
// give the pairing rules material (laterality antonyms, keyword groups).
const std::vector<std::string>& filler_sentences() {
  static const std::vector<std::string> fillers = {
      "Normal cardiomediastinal silhouette.",
      "Cardiomediastinal silhouette is unchanged.",
      "The cardiomediastinal silhouette is stable.",
      "Unremarkable cardiomediastinal silhouette.",
      "The left costophrenic angle is sharp.",
      "The right costophrenic angle is sharp.",
      "The lungs are clear.",
      "The trachea is midline.",
      "Degenerative changes are noted in the spine.",
  };
  return fillers;
}

std::string negated_list_sentence(const std::vector<std::string>& phrases) {
  std::string out = "No ";
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (i > 0) out += (i + 1 == phrases.size()) ? " or " : ", ";
    out += phrases[i];
  }
  out += ".";
  return out;
}

void validate_config(const SynthConfig& config) {
  if (config.findings.empty()) throw ConfigError("synthetic finding inventory is empty");
  if (config.images_per_study == 0) throw ConfigError("images_per_study must be >= 1");
  if (config.rows == 0 || config.cols == 0 || config.depth == 0) {
    throw ConfigError("grid shape must be non-zero");
  }
  if (config.min_sentences > config.max_sentences) {
    throw ConfigError("min_sentences > max_sentences");
  }
  for (std::size_t i = 0; i < config.findings.size(); ++i) {
    const auto& f = config.findings[i];
    if (f.signature.size() != config.depth) {
      throw ConfigError("finding \"" + f.name + "\" signature length != grid depth");
    }
    if (f.positive_templates.empty()) {
      throw ConfigError("finding \"" + f.name + "\" has no positive templates");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (config.findings[j].signature == f.signature) {
        throw ConfigError("findings \"" + config.findings[j].name + "\" and \"" + f.name +
                          "\" share a signature");
      }
    }
  }
}

}  // namespace

StudySet synth_generate(const SynthConfig& config) { return synth_generate(config, nullptr); }

StudySet synth_generate(const SynthConfig& config, std::vector<PlantedStudy>* planted) {
  validate_config(config);
  Rng rng(config.seed);
  StudySet set;
  if (planted) planted->clear();

  for (std::size_t si = 0; si < config.num_studies; ++si) {
    Study study;
    {
      std::ostringstream id;
      id << "synth-" << std::setw(4) << std::setfill('0') << si;
      study.id = id.str();
    }

    // low-level background texture; planted signatures stand well above it
    for (std::size_t k = 0; k < config.images_per_study; ++k) {
      Grid g = Grid::zeros(config.rows, config.cols, config.depth);
      for (double& v : g.data) v = 0.05 * rng.uniform();
      study.images.push_back(std::move(g));
    }

    PlantedStudy truth;
    std::vector<std::string> sentences;
    for (const auto& finding : config.findings) {
      if (rng.uniform() >= config.positive_rate) continue;
      truth.positive.insert(finding.name);
      std::size_t k = static_cast<std::size_t>(rng.below(config.images_per_study));
      std::size_t r = static_cast<std::size_t>(rng.below(config.rows));
      std::size_t c = static_cast<std::size_t>(rng.below(config.cols));
      for (std::size_t d = 0; d < config.depth; ++d) {
        study.images[k].at(r, c, d) += finding.signature[d];
      }
      const auto& pool = finding.positive_templates;
      sentences.push_back(config.deterministic_templates ? pool[0]
                                                         : pool[rng.below(pool.size())]);
    }

    std::vector<std::string> negated_phrases;
    for (const auto& finding : config.findings) {
      if (truth.positive.count(finding.name)) continue;
      if (rng.uniform() >= config.negated_mention_rate) continue;
      truth.negated.insert(finding.name);
      negated_phrases.push_back(finding.phrase);
    }
    if (!negated_phrases.empty()) sentences.push_back(negated_list_sentence(negated_phrases));

    std::size_t target = config.min_sentences +
                         rng.below(config.max_sentences - config.min_sentences + 1);
    std::vector<std::size_t> filler_order(filler_sentences().size());
    for (std::size_t i = 0; i < filler_order.size(); ++i) filler_order[i] = i;
    rng.shuffle(filler_order);
    for (std::size_t i = 0; sentences.size() < target && i < filler_order.size(); ++i) {
      sentences.push_back(filler_sentences()[filler_order[i]]);
    }

    // canonical order (findings, negations, fillers) keeps the text a
    // deterministic function of the planted content
    std::string reference;
    for (const auto& s : sentences) {
      if (!reference.empty()) reference += ' ';
      reference += s;
    }
    if (reference.empty()) reference = filler_sentences()[0];  // degenerate config guard
    study.reference = reference;

    set.studies.push_back(std::move(study));
    if (planted) planted->push_back(std::move(truth));
  }

  set.vocab = build_vocab(set.studies);
  return set;
}

SplitResult split_dataset(const StudySet& set, const SplitFractions& fractions,
                          std::uint64_t seed) {
  const double sum = fractions.train + fractions.val + fractions.test;
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0) {
    throw ValidationError("split fractions must be non-negative");
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
  std::size_t partitions = (fractions.train > 0) + (fractions.val > 0) + (fractions.test > 0);
  if (set.studies.size() < partitions) {
    throw ValidationError("fewer studies (" + std::to_string(set.studies.size()) +
                          ") than partitions (" + std::to_string(partitions) + ")");
  }

  const std::size_t n = set.studies.size();
  std::size_t n_val = static_cast<std::size_t>(fractions.val * static_cast<double>(n));
  std::size_t n_test = static_cast<std::size_t>(fractions.test * static_cast<double>(n));
  std::size_t n_train = n - n_val - n_test;  // floor leftovers go to train

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  SplitResult out;
  out.train.vocab = out.val.vocab = out.test.vocab = set.vocab;
  for (std::size_t i = 0; i < n; ++i) {
    const Study& s = set.studies[order[i]];
    if (i < n_train) {
      out.train.studies.push_back(s);
    } else if (i < n_train + n_val) {
      out.val.studies.push_back(s);
    } else {
      out.test.studies.push_back(s);
    }
  }
  return out;
}

}  // namespace factharness::corpus
