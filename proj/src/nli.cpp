#include "factharness/nli.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "factharness/error.hpp"

namespace factharness::nli {

using textproc::AnalyzedSentence;
using textproc::EntitySet;

std::string to_string(NLILabel label) {
  switch (label) {
    case NLILabel::kEntailment: return "entailment";
    case NLILabel::kNeutral: return "neutral";
    case NLILabel::kContradiction: return "contradiction";
  }
  return "neutral";
}

NLILabel label_from_string(const std::string& s) {
  if (s == "entailment") return NLILabel::kEntailment;
  if (s == "neutral") return NLILabel::kNeutral;
  if (s == "contradiction") return NLILabel::kContradiction;
  throw ParseError("unknown NLI label: \"" + s + "\"");
}

namespace {

bool subset_of(const EntitySet& inner, const EntitySet& outer) {
  return std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
}

}  // namespace

HeuristicBackend::HeuristicBackend(textproc::Lexicon lexicon,
                                   simscore::EmbeddingProvider provider,
                                   double entail_sim_threshold)
    : lexicon_(std::move(lexicon)),
      provider_(std::move(provider)),
      entail_sim_threshold_(entail_sim_threshold) {}

NLILabel HeuristicBackend::classify(const AnalyzedSentence& premise,
                                    const AnalyzedSentence& hypothesis) const {
  EntitySet prem = textproc::core_entities(premise);
  EntitySet hyp = textproc::core_entities(hypothesis);
  if (premise.negated != hypothesis.negated &&
      (subset_of(hyp, prem) || subset_of(prem, hyp))) {
    return NLILabel::kContradiction;
  }
  if (premise.negated == hypothesis.negated && subset_of(hyp, prem) &&
      !premise.tokens.empty() && !hypothesis.tokens.empty() &&
      simscore::bertscore(hypothesis.tokens, premise.tokens, provider_).f1 >=
          entail_sim_threshold_) {
    return NLILabel::kEntailment;
  }
  // remaining rules (modifier-antonym link, fallback) both yield NEUTRAL
  return NLILabel::kNeutral;
}

RemoteBackend::RemoteBackend(const NLIBackendConfig& config)
    : endpoint_(config.endpoint),
      timeout_seconds_(config.timeout_seconds),
      max_in_flight_(config.max_in_flight) {
  if (endpoint_.empty()) throw ConfigError("remote NLI backend requires an endpoint");
  if (timeout_seconds_ <= 0.0) throw ConfigError("remote NLI timeout must be > 0");
  if (max_in_flight_ < 1) throw ConfigError("remote NLI max_in_flight must be >= 1");
}

namespace {

// One POST /nli round trip. Distinguishes transport failures (retryable,
// RemoteError) from malformed 200 responses (ProtocolError).
NLILabel post_once(const std::string& endpoint, double timeout_seconds,
                   const std::string& premise_text, const std::string& hypothesis_text) {
  httplib::Client client(endpoint);
  auto secs = static_cast<time_t>(timeout_seconds);
  auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  nlohmann::json body = {{"premise", premise_text}, {"hypothesis", hypothesis_text}};
  auto res = client.Post("/nli", body.dump(), "application/json");
  if (!res) {
    throw RemoteError("NLI request to " + endpoint + " failed: " +
                      httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw RemoteError("NLI request to " + endpoint + " returned status " +
                      std::to_string(res->status));
  }
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("NLI response from " + endpoint + " is not JSON: " + e.what());
  }
  if (!reply.is_object() || !reply.contains("label") || !reply["label"].is_string()) {
    throw ProtocolError("NLI response from " + endpoint + " lacks a string \"label\"");
  }
  if (!reply.contains("scores") || !reply["scores"].is_array() ||
      reply["scores"].size() != 3) {
    throw ProtocolError("NLI response from " + endpoint +
                        " lacks a 3-element \"scores\" array");
  }
  try {
    return label_from_string(reply["label"].get<std::string>());
  } catch (const ParseError& e) {
    throw ProtocolError("NLI response from " + endpoint + ": " + e.what());
  }
}

NLILabel post_with_retry(const std::string& endpoint, double timeout_seconds,
                         const std::string& premise_text,
                         const std::string& hypothesis_text) {
  try {
    return post_once(endpoint, timeout_seconds, premise_text, hypothesis_text);
  } catch (const RemoteError&) {
    return post_once(endpoint, timeout_seconds, premise_text, hypothesis_text);
  }
}

}  // namespace

NLILabel RemoteBackend::classify(const AnalyzedSentence& premise,
                                 const AnalyzedSentence& hypothesis) const {
  return post_with_retry(endpoint_, timeout_seconds_, premise.text, hypothesis.text);
}

std::unique_ptr<NLIBackend> make_backend(const NLIBackendConfig& config,
                                         const textproc::Lexicon& lexicon,
                                         const simscore::EmbeddingProvider& provider) {
  switch (config.kind) {
    case BackendKind::kHeuristic:
      return std::make_unique<HeuristicBackend>(lexicon, provider);
    case BackendKind::kConstant:
      return std::make_unique<ConstantBackend>(config.constant_label);
    case BackendKind::kRemote:
      return std::make_unique<RemoteBackend>(config);
  }
  throw ConfigError("unknown NLI backend kind");
}

std::vector<NLILabel> remote_classify_batch(
    const std::vector<std::pair<AnalyzedSentence, AnalyzedSentence>>& pairs,
    const RemoteBackend& backend) {
  std::vector<NLILabel> labels(pairs.size(), NLILabel::kNeutral);
  if (pairs.empty()) return labels;

  std::vector<std::string> failures(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= pairs.size()) return;
      try {
        labels[i] = post_with_retry(backend.endpoint(), backend.timeout_seconds(),
                                    pairs[i].first.text, pairs[i].second.text);
      } catch (const Error& e) {
        failures[i] = e.what();
      }
    }
  };

  std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(backend.max_in_flight()), pairs.size());
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  std::ostringstream failed;
  std::size_t n_failed = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (failures[i].empty()) continue;
    if (n_failed++) failed << ", ";
    failed << i;
  }
  if (n_failed > 0) {
    throw RemoteError("NLI batch against " + backend.endpoint() + " failed for " +
                      std::to_string(n_failed) + " of " + std::to_string(pairs.size()) +
                      " pairs (indices " + failed.str() + ")");
  }
  return labels;
}

}  // namespace factharness::nli
