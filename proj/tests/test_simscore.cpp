#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "factharness/error.hpp"
#include "factharness/rng.hpp"
#include "factharness/simscore.hpp"

using namespace factharness;
using simscore::EmbeddingProvider;

namespace {

// independent greedy-matching oracle, written against the definition rather
// than the library helpers
simscore::SimScore oracle_bertscore(const std::vector<std::string>& cand,
                                    const std::vector<std::string>& ref,
                                    const EmbeddingProvider& provider) {
  auto max_cos = [&](const std::string& from, const std::vector<std::string>& to) {
    double best = -1.0;
    for (const auto& t : to) best = std::max(best, simscore::cosine(provider.embed(from),
                                                                    provider.embed(t)));
    return best;
  };
  simscore::SimScore s;
  for (const auto& c : cand) s.precision += max_cos(c, ref);
  for (const auto& r : ref) s.recall += max_cos(r, cand);
  s.precision /= static_cast<double>(cand.size());
  s.recall /= static_cast<double>(ref.size());
  s.f1 = (s.precision + s.recall == 0.0)
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::vector<std::string> random_tokens(Rng& rng, std::size_t max_len) {
  static const std::vector<std::string> pool = {
      "heart", "lung",  "effusion", "small", "large", "the",   "is",    "clear",
      "edema", "right", "left",     "seen",  "noted", "chest", "spine", "stable"};
  std::size_t n = 1 + rng.below(max_len);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool[rng.below(pool.size())]);
  return out;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("cosine basics") {
  CHECK(simscore::cosine({1, 0}, {1, 0}) == doctest::Approx(1.0));
  CHECK(simscore::cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(simscore::cosine({1, 0}, {-1, 0}) == doctest::Approx(-1.0));
  CHECK(simscore::cosine({0, 0}, {1, 0}) == 0.0);  // zero vector convention
  CHECK(simscore::cosine({2, 0}, {5, 0}) == doctest::Approx(1.0));  // scale invariant
}

TEST_CASE("self-score is 1 within 1e-9 over 50 random token lists") {
  auto provider = EmbeddingProvider::hashed_ngram();
  Rng rng(41);
  for (int i = 0; i < 50; ++i) {
    auto toks = random_tokens(rng, 12);
    auto s = simscore::bertscore(toks, toks, provider);
    CHECK(std::abs(s.precision - 1.0) <= 1e-9);
    CHECK(std::abs(s.recall - 1.0) <= 1e-9);
    CHECK(std::abs(s.f1 - 1.0) <= 1e-9);
  }
}

TEST_CASE("swapping candidate and reference exchanges p and r, preserves f1 exactly") {
  auto provider = EmbeddingProvider::hashed_ngram();
  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    auto a = random_tokens(rng, 10);
    auto b = random_tokens(rng, 10);
    auto ab = simscore::bertscore(a, b, provider);
    auto ba = simscore::bertscore(b, a, provider);
    CHECK(ab.precision == ba.recall);  // bitwise: same sum, same divisor
    CHECK(ab.recall == ba.precision);
    CHECK(ab.f1 == ba.f1);
  }
}

TEST_CASE("matches the independent greedy-matching oracle") {
  auto provider = EmbeddingProvider::hashed_ngram();
  Rng rng(43);
  for (int i = 0; i < 30; ++i) {
    auto a = random_tokens(rng, 8);
    auto b = random_tokens(rng, 8);
    auto got = simscore::bertscore(a, b, provider);
    auto want = oracle_bertscore(a, b, provider);
    CHECK(got.precision == doctest::Approx(want.precision).epsilon(1e-12));
    CHECK(got.recall == doctest::Approx(want.recall).epsilon(1e-12));
    CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
  }
}

TEST_CASE("empty sides are rejected") {
  auto provider = EmbeddingProvider::hashed_ngram();
  CHECK_THROWS_AS(simscore::bertscore({}, {"a"}, provider), ValidationError);
  CHECK_THROWS_AS(simscore::bertscore({"a"}, {}, provider), ValidationError);
  CHECK_THROWS_AS(simscore::bertscore_embedded({}, {}), ValidationError);
}

TEST_CASE("baseline rescale is affine in all three fields") {
  auto provider = EmbeddingProvider::hashed_ngram();
  std::vector<std::string> a = {"heart", "small"}, b = {"heart", "large"};
  auto raw = simscore::bertscore(a, b, provider);
  auto scaled = simscore::bertscore(a, b, provider, 0.5);
  CHECK(scaled.precision == doctest::Approx((raw.precision - 0.5) / 0.5));
  CHECK(scaled.recall == doctest::Approx((raw.recall - 0.5) / 0.5));
  CHECK(scaled.f1 == doctest::Approx((raw.f1 - 0.5) / 0.5));
}

TEST_CASE("hashed provider is deterministic and token-dependent") {
  auto p1 = EmbeddingProvider::hashed_ngram();
  auto p2 = EmbeddingProvider::hashed_ngram();
  CHECK(p1.dimension() == 128);
  CHECK(p1.embed("effusion") == p2.embed("effusion"));
  CHECK(p1.embed("effusion") != p1.embed("effusions"));
  // embeddings are L2-normalized
  double norm = 0.0;
  for (double v : p1.embed("атипичный")) norm += v * v;  // non-ASCII bytes hash too
  CHECK(std::sqrt(norm) == doctest::Approx(1.0));
}

TEST_CASE("bertscore_embedded agrees with the token-level entry point") {
  auto provider = EmbeddingProvider::hashed_ngram();
  std::vector<std::string> a = {"the", "heart", "is", "enlarged"};
  std::vector<std::string> b = {"the", "heart", "appears", "enlarged"};
  auto direct = simscore::bertscore(a, b, provider);
  auto cached = simscore::bertscore_embedded(provider.embed_tokens(a), provider.embed_tokens(b));
  CHECK(direct.precision == cached.precision);
  CHECK(direct.recall == cached.recall);
  CHECK(direct.f1 == cached.f1);
}

TEST_CASE("wordvec file: known tokens exact, OOV falls back to hashing") {
  auto path = temp_path("factharness_vectors_ok.txt");
  {
    std::ofstream out(path);
    out << "alpha 1 0 0\n";
    out << "beta 0 1 0\n\n";  // blank lines are skipped
    out << "gamma 0 1 0\n";
  }
  auto p = EmbeddingProvider::from_wordvec_file(path);
  CHECK(p.dimension() == 3);
  CHECK(p.embed("alpha") == std::vector<double>{1, 0, 0});
  CHECK(simscore::cosine(p.embed("beta"), p.embed("gamma")) == doctest::Approx(1.0));
  CHECK(simscore::cosine(p.embed("alpha"), p.embed("beta")) == doctest::Approx(0.0));
  // OOV: hashed at the file's dimension, deterministic
  auto oov = p.embed("delta");
  CHECK(oov.size() == 3);
  CHECK(oov == p.embed("delta"));
  std::filesystem::remove(path);
}

TEST_CASE("wordvec file parse errors") {
  CHECK_THROWS_AS(EmbeddingProvider::from_wordvec_file("/nonexistent/vectors.txt"), IoError);

  auto empty = temp_path("factharness_vectors_empty.txt");
  { std::ofstream out(empty); }
  CHECK_THROWS_AS(EmbeddingProvider::from_wordvec_file(empty), ParseError);

  auto ragged = temp_path("factharness_vectors_ragged.txt");
  {
    std::ofstream out(ragged);
    out << "alpha 1 0\nbeta 1 0 0\n";
  }
  CHECK_THROWS_AS(EmbeddingProvider::from_wordvec_file(ragged), ParseError);

  auto novals = temp_path("factharness_vectors_novals.txt");
  {
    std::ofstream out(novals);
    out << "alpha\n";
  }
  CHECK_THROWS_AS(EmbeddingProvider::from_wordvec_file(novals), ParseError);

  std::filesystem::remove(empty);
  std::filesystem::remove(ragged);
  std::filesystem::remove(novals);
}

TEST_CASE("repo fixture reproduces the synonym-cluster similarity") {
  auto p = EmbeddingProvider::from_wordvec_file(std::string(FACTHARNESS_DATA_DIR) +
                                                "/vectors.txt");
  CHECK(simscore::cosine(p.embed("is"), p.embed("appears")) == doctest::Approx(1.0));
  CHECK(simscore::cosine(p.embed("mildly"), p.embed("moderate")) == doctest::Approx(1.0));
  CHECK(simscore::cosine(p.embed("heart"), p.embed("enlarged")) == doctest::Approx(0.0));
}
