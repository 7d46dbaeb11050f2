#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace factharness::simscore {

// Greedy-matching token similarity. f1 is the harmonic mean of precision
// and recall; all three are cosines aggregated over tokens.
struct SimScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

enum class EmbeddingMode {
  kHashedNgram,   // sum of hashed character-3-gram basis vectors, L2-normalized
  kWordvecFile,   // word vectors from a text file; OOV falls back to hashed 3-grams
};

class EmbeddingProvider {
 public:
  static EmbeddingProvider hashed_ngram(std::size_t dimension = 128);
  // One entry per line: token followed by `dimension` decimals.
  static EmbeddingProvider from_wordvec_file(const std::string& path);

  const std::string& name() const { return name_; }
  std::size_t dimension() const { return dimension_; }
  EmbeddingMode mode() const { return mode_; }

  std::vector<double> embed(const std::string& token) const;
  std::vector<std::vector<double>> embed_tokens(const std::vector<std::string>& tokens) const;

 private:
  EmbeddingProvider() = default;

  std::vector<double> hashed_embed(const std::string& token) const;

  std::string name_;
  std::size_t dimension_ = 0;
  EmbeddingMode mode_ = EmbeddingMode::kHashedNgram;
  std::unordered_map<std::string, std::vector<double>> table_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// recall = mean over reference tokens of the max cosine to any candidate
// token; precision symmetric; f1 harmonic mean. Throws ValidationError on
// an empty side. `baseline` applies the optional affine rescale
// (s - b) / (1 - b) to all three fields; disabled when 0.
SimScore bertscore(const std::vector<std::string>& candidate_tokens,
                   const std::vector<std::string>& reference_tokens,
                   const EmbeddingProvider& provider, double baseline = 0.0);

// Same scoring over precomputed embeddings; callers that score many pairs
// cache embed_tokens output and call this.
SimScore bertscore_embedded(const std::vector<std::vector<double>>& candidate,
                            const std::vector<std::vector<double>>& reference,
                            double baseline = 0.0);

SimScore bertscore_text(const std::string& candidate, const std::string& reference,
                        const EmbeddingProvider& provider, double baseline = 0.0);

}  // namespace factharness::simscore
