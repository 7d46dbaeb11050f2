#include "factharness/simscore.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "factharness/error.hpp"
#include "factharness/textproc.hpp"

namespace factharness::simscore {

namespace {

// FNV-1a, fixed so that hashed embeddings are stable across platforms.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

EmbeddingProvider EmbeddingProvider::hashed_ngram(std::size_t dimension) {
  EmbeddingProvider p;
  p.name_ = "hashed-3gram-" + std::to_string(dimension);
  p.dimension_ = dimension;
  p.mode_ = EmbeddingMode::kHashedNgram;
  return p;
}

EmbeddingProvider EmbeddingProvider::from_wordvec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open word-vector file: " + path);
  EmbeddingProvider p;
  p.name_ = "wordvec:" + path;
  p.mode_ = EmbeddingMode::kWordvecFile;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> vec;
    double v;
    while (ls >> v) vec.push_back(v);
    if (token.empty() || vec.empty()) {
      throw ParseError("word-vector file " + path + " line " + std::to_string(lineno) +
                       ": expected token followed by decimals");
    }
    if (p.dimension_ == 0) {
      p.dimension_ = vec.size();
    } else if (vec.size() != p.dimension_) {
      throw ParseError("word-vector file " + path + " line " + std::to_string(lineno) +
                       ": dimension " + std::to_string(vec.size()) + " != " +
                       std::to_string(p.dimension_));
    }
    p.table_[token] = std::move(vec);
  }
  if (p.table_.empty()) {
    throw ParseError("word-vector file " + path + ": no entries");
  }
  return p;
}

std::vector<double> EmbeddingProvider::hashed_embed(const std::string& token) const {
  std::vector<double> v(dimension_, 0.0);
  if (token.empty()) return v;
  // character 3-grams; tokens shorter than 3 contribute themselves
  if (token.size() < 3) {
    v[fnv1a(token) % dimension_] += 1.0;
  } else {
    for (std::size_t i = 0; i + 3 <= token.size(); ++i) {
      v[fnv1a(token.substr(i, 3)) % dimension_] += 1.0;
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> EmbeddingProvider::embed(const std::string& token) const {
  if (mode_ == EmbeddingMode::kWordvecFile) {
    auto it = table_.find(token);
    if (it != table_.end()) return it->second;
  }
  return hashed_embed(token);
}

std::vector<std::vector<double>> EmbeddingProvider::embed_tokens(
    const std::vector<std::string>& tokens) const {
  std::vector<std::vector<double>> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(embed(t));
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

SimScore bertscore_embedded(const std::vector<std::vector<double>>& candidate,
                            const std::vector<std::vector<double>>& reference,
                            double baseline) {
  if (candidate.empty() || reference.empty()) {
    throw ValidationError("bertscore: empty token list");
  }
  auto greedy_mean = [](const std::vector<std::vector<double>>& from,
                        const std::vector<std::vector<double>>& to) {
    double total = 0.0;
    for (const auto& f : from) {
      double best = -1.0;
      for (const auto& t : to) best = std::max(best, cosine(f, t));
      total += best;
    }
    return total / static_cast<double>(from.size());
  };

  SimScore s;
  s.precision = greedy_mean(candidate, reference);
  s.recall = greedy_mean(reference, candidate);
  s.f1 = harmonic(s.precision, s.recall);
  if (baseline != 0.0) {
    auto rescale = [baseline](double x) { return (x - baseline) / (1.0 - baseline); };
    s.precision = rescale(s.precision);
    s.recall = rescale(s.recall);
    s.f1 = rescale(s.f1);
  }
  return s;
}

SimScore bertscore(const std::vector<std::string>& candidate_tokens,
                   const std::vector<std::string>& reference_tokens,
                   const EmbeddingProvider& provider, double baseline) {
  if (candidate_tokens.empty() || reference_tokens.empty()) {
    throw ValidationError("bertscore: empty token list");
  }
  return bertscore_embedded(provider.embed_tokens(candidate_tokens),
                            provider.embed_tokens(reference_tokens), baseline);
}

SimScore bertscore_text(const std::string& candidate, const std::string& reference,
                        const EmbeddingProvider& provider, double baseline) {
  return bertscore(textproc::tokenize(candidate), textproc::tokenize(reference), provider,
                   baseline);
}

}  // namespace factharness::simscore
