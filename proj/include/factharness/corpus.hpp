#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace factharness::corpus {

// One image's worth of unitless visual features, row-major (row, col, depth).
struct Grid {
  std::size_t rows = 0, cols = 0, depth = 0;
  std::vector<double> data;

  static Grid zeros(std::size_t rows, std::size_t cols, std::size_t depth) {
    return Grid{rows, cols, depth, std::vector<double>(rows * cols * depth, 0.0)};
  }
  double& at(std::size_t r, std::size_t c, std::size_t d) {
    return data[(r * cols + c) * depth + d];
  }
  double at(std::size_t r, std::size_t c, std::size_t d) const {
    return data[(r * cols + c) * depth + d];
  }
  std::size_t positions() const { return rows * cols; }
};

struct Study {
  std::string id;
  std::vector<Grid> images;  // K grids, all the same shape
  std::string reference;     // raw findings text
};

// Reserved vocab slots; every StudySet vocab starts with these.
inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kBosId = 1;
inline constexpr std::size_t kEosId = 2;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kBosToken = "<bos>";
inline constexpr const char* kEosToken = "<eos>";

struct StudySet {
  std::vector<Study> studies;
  std::vector<std::string> vocab;  // [<pad>, <bos>, <eos>, tokens...]
};

// Sorted unique reference tokens behind the reserved entries.
std::vector<std::string> build_vocab(const std::vector<Study>& studies);

// Token ids for a reference text: BOS, tokens, EOS. Unknown token -> error.
std::vector<std::size_t> encode_reference(const std::string& text,
                                          const std::vector<std::string>& vocab);
// Inverse for generated sequences: drops pad/bos/eos, joins with spaces.
std::string decode_ids(const std::vector<std::size_t>& ids,
                       const std::vector<std::string>& vocab);

struct LoadOptions {
  // shape of the zero grids substituted when a record carries no images
  std::size_t images_per_study = 2;
  std::size_t rows = 4, cols = 4, depth = 16;
};

// JSONL records {"id", "findings", "images"?}. Records with token-empty
// findings are skipped; malformed lines raise ParseError with the line
// number; duplicate ids raise ValidationError.
StudySet load_reports(const std::string& path, const LoadOptions& options = {});
void save_reports(const StudySet& set, const std::string& path);

// One synthetic finding: a distinct visual signature planted into grids
// plus the sentence forms that mention it. Affirmative templates must stay
// free of negation cues; `phrase` is the noun phrase used in negated list
// sentences ("No X or Y.").
struct Finding {
  std::string name;  // observation name as used by the clinical labeler
  std::vector<double> signature;
  std::vector<std::string> positive_templates;
  std::string phrase;
};

struct SynthConfig {
  std::size_t num_studies = 100;
  std::size_t images_per_study = 2;  // K
  std::size_t rows = 4, cols = 4, depth = 16;
  std::vector<Finding> findings;
  std::size_t min_sentences = 2, max_sentences = 5;
  double positive_rate = 0.4;
  double negated_mention_rate = 0.3;  // absent findings mentioned as negated
  bool deterministic_templates = false;  // always pick template 0 (fully image-determined text)
  std::uint64_t seed = 1;
};

// The 5 evaluated observations with pairwise-distinct signatures.
std::vector<Finding> default_findings(std::size_t depth);

// Ground truth recorded at planting time; everything else is NOT_MENTIONED.
struct PlantedStudy {
  std::set<std::string> positive;
  std::set<std::string> negated;
};

StudySet synth_generate(const SynthConfig& config);
StudySet synth_generate(const SynthConfig& config, std::vector<PlantedStudy>* planted);

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;
};

struct SplitResult {
  StudySet train, val, test;
};

// Seeded shuffle, then sizes floor(n*f) with the remainder going to train.
// All three splits share the input vocab.
SplitResult split_dataset(const StudySet& set, const SplitFractions& fractions,
                          std::uint64_t seed);

}  // namespace factharness::corpus
