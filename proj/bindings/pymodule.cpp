// Python bindings for the reward / NLI / evaluation surface. Training and
// decoding stay behind the CLI; this module covers the operations a caller
// composes interactively: analyze text, mine weak-supervision pairs, classify
// NLI, score rewards, and evaluate.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "factharness/cliniceval.hpp"
#include "factharness/error.hpp"
#include "factharness/corpus.hpp"
#include "factharness/nli.hpp"
#include "factharness/nlipairs.hpp"
#include "factharness/rewards.hpp"
#include "factharness/simscore.hpp"
#include "factharness/textproc.hpp"

namespace py = pybind11;
using namespace factharness;

namespace {

std::vector<std::string> status_strings(const cliniceval::ObservationStatus& status) {
  std::vector<std::string> out;
  for (auto s : status) out.push_back(cliniceval::to_string(s));
  return out;
}

cliniceval::ObservationStatus status_from_strings(const std::vector<std::string>& strs) {
  if (strs.size() != cliniceval::kNumObservations) {
    throw ValidationError("expected " + std::to_string(cliniceval::kNumObservations) +
                          " observation statuses, got " + std::to_string(strs.size()));
  }
  cliniceval::ObservationStatus out;
  for (std::size_t i = 0; i < strs.size(); ++i) {
    if (strs[i] == "POSITIVE") {
      out[i] = cliniceval::Status::kPositive;
    } else if (strs[i] == "NEGATIVE") {
      out[i] = cliniceval::Status::kNegative;
    } else if (strs[i] == "NOT_MENTIONED") {
      out[i] = cliniceval::Status::kNotMentioned;
    } else {
      throw ValidationError("unknown observation status: " + strs[i]);
    }
  }
  return out;
}

// Bundles the lexicon, embedding provider, and heuristic NLI backend so the
// text-level operations can be called with plain strings.
class Harness {
 public:
  explicit Harness(const std::string& lexicon_path,
                   const std::optional<std::string>& vectors_path = std::nullopt)
      : lexicon_(textproc::Lexicon::from_json_file(lexicon_path)),
        provider_(vectors_path ? simscore::EmbeddingProvider::from_wordvec_file(*vectors_path)
                               : simscore::EmbeddingProvider::hashed_ngram()),
        backend_(lexicon_, provider_) {}

  std::vector<std::pair<std::string, std::string>> entities(const std::string& text) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : textproc::analyze_report(text, lexicon_).entity_set) {
      out.emplace_back(e.first, textproc::to_string(e.second));
    }
    return out;
  }

  double fact_ent(const std::string& gen, const std::string& ref) const {
    return rewards::fact_ent(textproc::analyze_report(gen, lexicon_),
                             textproc::analyze_report(ref, lexicon_))
        .value;
  }

  double fact_entnli(const std::string& gen, const std::string& ref) const {
    return rewards::fact_entnli(textproc::analyze_report(gen, lexicon_),
                                textproc::analyze_report(ref, lexicon_), backend_, provider_)
        .value;
  }

  std::string nli(const std::string& premise, const std::string& hypothesis) const {
    return nli::to_string(backend_.classify(textproc::analyze_sentence(premise, lexicon_),
                                            textproc::analyze_sentence(hypothesis, lexicon_)));
  }

  std::optional<py::dict> match_rule(const std::string& s1, const std::string& s2) const {
    auto m = nlipairs::match_rules(textproc::analyze_sentence(s1, lexicon_),
                                   textproc::analyze_sentence(s2, lexicon_), lexicon_, provider_);
    if (!m.has_value()) return std::nullopt;
    py::dict d;
    d["rule"] = nlipairs::to_string(m->rule);
    d["label"] = nli::to_string(m->label);
    d["sim"] = m->sim;
    return d;
  }

  std::vector<std::string> label_observations(const std::string& text) const {
    return status_strings(
        cliniceval::label_observations(textproc::analyze_report(text, lexicon_), lexicon_));
  }

  std::vector<py::dict> generate_pairs(const corpus::StudySet& set, std::size_t e1,
                                       std::size_t neutral_each, std::size_t c1,
                                       std::uint64_t seed) const {
    nlipairs::Quotas quotas;
    quotas.e1 = e1;
    quotas.n1 = quotas.n2 = quotas.n3 = quotas.n4 = neutral_each;
    quotas.c1 = c1;
    auto result = nlipairs::generate_training_pairs(set, quotas, lexicon_, provider_, seed);
    std::vector<py::dict> out;
    for (const auto& p : result.pairs) {
      py::dict d;
      d["premise"] = p.premise.text;
      d["hypothesis"] = p.hypothesis.text;
      d["label"] = nli::to_string(p.label);
      d["rule"] = nlipairs::to_string(p.rule);
      d["sim"] = p.sim;
      out.push_back(std::move(d));
    }
    return out;
  }

  const textproc::Lexicon& lexicon() const { return lexicon_; }

 private:
  textproc::Lexicon lexicon_;
  simscore::EmbeddingProvider provider_;
  nli::HeuristicBackend backend_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Factual-consistency rewards and weak-supervision NLI for report generation";

  py::register_exception<Error>(m, "FactharnessError");

  py::class_<corpus::StudySet>(m, "StudySet")
      .def("__len__", [](const corpus::StudySet& s) { return s.studies.size(); })
      .def_property_readonly("references",
                             [](const corpus::StudySet& s) {
                               std::vector<std::string> out;
                               for (const auto& st : s.studies) out.push_back(st.reference);
                               return out;
                             })
      .def_property_readonly("vocab_size",
                             [](const corpus::StudySet& s) { return s.vocab.size(); });

  m.def(
      "synth",
      [](std::size_t num_studies, std::uint64_t seed) {
        corpus::SynthConfig cfg;
        cfg.num_studies = num_studies;
        cfg.seed = seed;
        cfg.findings = corpus::default_findings(cfg.depth);
        return corpus::synth_generate(cfg);
      },
      py::arg("num_studies"), py::arg("seed") = 1,
      "Generate a synthetic study set with the default findings inventory");

  py::class_<Harness>(m, "Harness")
      .def(py::init<const std::string&, const std::optional<std::string>&>(),
           py::arg("lexicon_path"), py::arg("vectors_path") = std::nullopt)
      .def("entities", &Harness::entities, py::arg("text"),
           "Entity set of a report as (surface, type) pairs")
      .def("fact_ent", &Harness::fact_ent, py::arg("gen"), py::arg("ref"),
           "Harmonic-mean entity overlap between generated and reference reports")
      .def("fact_entnli", &Harness::fact_entnli, py::arg("gen"), py::arg("ref"),
           "fact_ent with NLI veto/rescue under the heuristic backend")
      .def("nli", &Harness::nli, py::arg("premise"), py::arg("hypothesis"),
           "Heuristic NLI label for a sentence pair")
      .def("match_rule", &Harness::match_rule, py::arg("s1"), py::arg("s2"),
           "First weak-supervision rule matching the pair, or None")
      .def("label_observations", &Harness::label_observations, py::arg("text"),
           "Status of each tracked clinical observation in a report")
      .def("generate_pairs", &Harness::generate_pairs, py::arg("study_set"), py::arg("e1"),
           py::arg("neutral_each"), py::arg("c1"), py::arg("seed") = 1,
           "Mine weak-supervision NLI pairs from a study set under per-rule quotas");

  m.def(
      "bertscore",
      [](const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
        const auto s = simscore::bertscore(cand, ref, simscore::EmbeddingProvider::hashed_ngram());
        py::dict d;
        d["precision"] = s.precision;
        d["recall"] = s.recall;
        d["f1"] = s.f1;
        return d;
      },
      py::arg("candidate"), py::arg("reference"),
      "Greedy-matching token similarity under hashed n-gram embeddings");

  m.def("tokenize", &textproc::tokenize, py::arg("text"));
  m.def("split_sentences", &textproc::split_sentences, py::arg("text"));
  m.def("spearman", &cliniceval::spearman, py::arg("xs"), py::arg("ys"),
        "Rank correlation with average ranks for ties");

  m.def(
      "micro_metrics",
      [](const std::vector<std::vector<std::string>>& pred,
         const std::vector<std::vector<std::string>>& ref) {
        std::vector<cliniceval::ObservationStatus> p, r;
        for (const auto& row : pred) p.push_back(status_from_strings(row));
        for (const auto& row : ref) r.push_back(status_from_strings(row));
        const auto m2 = cliniceval::micro_metrics(p, r);
        py::dict d;
        d["precision"] = m2.precision;
        d["recall"] = m2.recall;
        d["f1"] = m2.f1;
        d["accuracy"] = m2.accuracy;
        return d;
      },
      py::arg("predicted"), py::arg("reference"),
      "Micro-averaged positive-class metrics over observation statuses");

  m.def("observation_names", [] {
    const auto& names = cliniceval::observation_names();
    return std::vector<std::string>(names.begin(), names.end());
  });
}
