#include "factharness/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "factharness/checkpoint.hpp"
#include "factharness/cliniceval.hpp"
#include "factharness/corpus.hpp"
#include "factharness/error.hpp"
#include "factharness/m2trans.hpp"
#include "factharness/nli.hpp"
#include "factharness/nlipairs.hpp"
#include "factharness/rewards.hpp"
#include "factharness/simscore.hpp"
#include "factharness/textproc.hpp"
#include "factharness/trainer.hpp"

namespace factharness::cli {
namespace {

using nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out;
  std::string lexicon_path = "data/lexicon.json";
  std::string vectors_path;  // empty -> hashed n-gram embeddings

  corpus::SynthConfig synth;
  corpus::SplitFractions split;
  m2trans::ModelConfig model;
  trainer::TrainConfig train;
  trainer::LossWeights weights = trainer::LossWeights::nll_bs_fact();
  std::string reward_nlg = "bertscore";
  std::string reward_fact = "fact_ent";

  nli::NLIBackendConfig nli_cfg;
  std::string entnli_fallback = "neutral";

  nlipairs::Quotas quotas;
  std::size_t pair_budget = 500000;
  nlipairs::MatchOptions match;
  std::size_t val_decode_limit = 0;
};

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }

  get_if(j, "seed", cfg.seed);
  get_if(j, "out", cfg.out);
  get_if(j, "lexicon", cfg.lexicon_path);
  get_if(j, "vectors", cfg.vectors_path);

  if (j.contains("synth")) {
    const json& s = j["synth"];
    get_if(s, "num_studies", cfg.synth.num_studies);
    get_if(s, "images_per_study", cfg.synth.images_per_study);
    get_if(s, "rows", cfg.synth.rows);
    get_if(s, "cols", cfg.synth.cols);
    get_if(s, "depth", cfg.synth.depth);
    get_if(s, "min_sentences", cfg.synth.min_sentences);
    get_if(s, "max_sentences", cfg.synth.max_sentences);
    get_if(s, "positive_rate", cfg.synth.positive_rate);
    get_if(s, "negated_mention_rate", cfg.synth.negated_mention_rate);
    get_if(s, "deterministic_templates", cfg.synth.deterministic_templates);
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    get_if(s, "val", cfg.split.val);
    get_if(s, "test", cfg.split.test);
    get_if(s, "train", cfg.split.train);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    get_if(m, "d", cfg.model.d);
    get_if(m, "heads", cfg.model.heads);
    get_if(m, "n_layers", cfg.model.n_layers);
    get_if(m, "n_mem", cfg.model.n_mem);
    get_if(m, "max_len", cfg.model.max_len);
    get_if(m, "ff", cfg.model.ff);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    get_if(t, "epochs", cfg.train.epochs);
    get_if(t, "batch_size", cfg.train.batch_size);
    get_if(t, "warmup_steps", cfg.train.warmup_steps);
    get_if(t, "lr_scale", cfg.train.lr_scale);
    get_if(t, "rl_learning_rate", cfg.train.rl_learning_rate);
    get_if(t, "clip_norm", cfg.train.clip_norm);
    get_if(t, "sample_temperature", cfg.train.sample_temperature);
    if (t.contains("schedule")) {
      const std::string s = t["schedule"];
      if (s == "auto") cfg.train.schedule = trainer::Schedule::kAuto;
      else if (s == "warmup") cfg.train.schedule = trainer::Schedule::kWarmup;
      else if (s == "fixed") cfg.train.schedule = trainer::Schedule::kFixed;
      else throw ConfigError("unknown schedule: " + s);
    }
  }
  if (j.contains("weights")) {
    const json& w = j["weights"];
    get_if(w, "nll", cfg.weights.nll);
    get_if(w, "rl_nlg", cfg.weights.rl_nlg);
    get_if(w, "rl_fact", cfg.weights.rl_fact);
  }
  if (j.contains("rewards")) {
    const json& r = j["rewards"];
    get_if(r, "nlg", cfg.reward_nlg);
    get_if(r, "fact", cfg.reward_fact);
  }
  if (j.contains("nli")) {
    const json& n = j["nli"];
    std::string backend = "heuristic";
    get_if(n, "backend", backend);
    if (backend == "heuristic") cfg.nli_cfg.kind = nli::BackendKind::kHeuristic;
    else if (backend == "remote") cfg.nli_cfg.kind = nli::BackendKind::kRemote;
    else if (backend == "constant") cfg.nli_cfg.kind = nli::BackendKind::kConstant;
    else throw ConfigError("unknown nli backend: " + backend);
    std::string constant = "neutral";
    get_if(n, "constant_label", constant);
    cfg.nli_cfg.constant_label = nli::label_from_string(constant);
    get_if(n, "endpoint", cfg.nli_cfg.endpoint);
    get_if(n, "timeout_seconds", cfg.nli_cfg.timeout_seconds);
    get_if(n, "max_in_flight", cfg.nli_cfg.max_in_flight);
    get_if(n, "fallback", cfg.entnli_fallback);
  }
  if (j.contains("quotas")) {
    const json& q = j["quotas"];
    get_if(q, "e1", cfg.quotas.e1);
    get_if(q, "n1", cfg.quotas.n1);
    get_if(q, "n2", cfg.quotas.n2);
    get_if(q, "n3", cfg.quotas.n3);
    get_if(q, "n4", cfg.quotas.n4);
    get_if(q, "c1", cfg.quotas.c1);
    get_if(q, "budget", cfg.pair_budget);
  }
  if (j.contains("match")) {
    const json& m = j["match"];
    get_if(m, "sim_threshold", cfg.match.sim_threshold);
    get_if(m, "c1_subset_s1_in_s2", cfg.match.c1_subset_s1_in_s2);
  }
  get_if(j, "val_decode_limit", cfg.val_decode_limit);
  return cfg;
}

const char* schedule_name(trainer::Schedule s) {
  switch (s) {
    case trainer::Schedule::kAuto: return "auto";
    case trainer::Schedule::kWarmup: return "warmup";
    case trainer::Schedule::kFixed: return "fixed";
  }
  return "auto";
}

const char* backend_name(nli::BackendKind k) {
  switch (k) {
    case nli::BackendKind::kHeuristic: return "heuristic";
    case nli::BackendKind::kRemote: return "remote";
    case nli::BackendKind::kConstant: return "constant";
  }
  return "heuristic";
}

json config_json(const RunConfig& cfg) {
  return json{
      {"seed", cfg.seed},
      {"out", cfg.out},
      {"lexicon", cfg.lexicon_path},
      {"vectors", cfg.vectors_path},
      {"synth",
       {{"num_studies", cfg.synth.num_studies},
        {"images_per_study", cfg.synth.images_per_study},
        {"rows", cfg.synth.rows},
        {"cols", cfg.synth.cols},
        {"depth", cfg.synth.depth},
        {"min_sentences", cfg.synth.min_sentences},
        {"max_sentences", cfg.synth.max_sentences},
        {"positive_rate", cfg.synth.positive_rate},
        {"negated_mention_rate", cfg.synth.negated_mention_rate},
        {"deterministic_templates", cfg.synth.deterministic_templates}}},
      {"split", {{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test}}},
      {"model",
       {{"d", cfg.model.d},
        {"heads", cfg.model.heads},
        {"n_layers", cfg.model.n_layers},
        {"n_mem", cfg.model.n_mem},
        {"max_len", cfg.model.max_len},
        {"ff", cfg.model.ff}}},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"warmup_steps", cfg.train.warmup_steps},
        {"lr_scale", cfg.train.lr_scale},
        {"rl_learning_rate", cfg.train.rl_learning_rate},
        {"clip_norm", cfg.train.clip_norm},
        {"sample_temperature", cfg.train.sample_temperature},
        {"schedule", schedule_name(cfg.train.schedule)}}},
      {"weights",
       {{"nll", cfg.weights.nll}, {"rl_nlg", cfg.weights.rl_nlg}, {"rl_fact", cfg.weights.rl_fact}}},
      {"rewards", {{"nlg", cfg.reward_nlg}, {"fact", cfg.reward_fact}}},
      {"nli",
       {{"backend", backend_name(cfg.nli_cfg.kind)},
        {"constant_label", nli::to_string(cfg.nli_cfg.constant_label)},
        {"endpoint", cfg.nli_cfg.endpoint},
        {"timeout_seconds", cfg.nli_cfg.timeout_seconds},
        {"max_in_flight", cfg.nli_cfg.max_in_flight},
        {"fallback", cfg.entnli_fallback}}},
      {"quotas",
       {{"e1", cfg.quotas.e1},
        {"n1", cfg.quotas.n1},
        {"n2", cfg.quotas.n2},
        {"n3", cfg.quotas.n3},
        {"n4", cfg.quotas.n4},
        {"c1", cfg.quotas.c1},
        {"budget", cfg.pair_budget}}},
      {"match",
       {{"sim_threshold", cfg.match.sim_threshold},
        {"c1_subset_s1_in_s2", cfg.match.c1_subset_s1_in_s2}}},
      {"val_decode_limit", cfg.val_decode_limit}};
}

// every run leaves the resolved config next to its artifacts
void echo_config(const RunConfig& cfg, const std::string& subcommand) {
  json j = config_json(cfg);
  j["subcommand"] = subcommand;
  if (cfg.out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::filesystem::create_directories(cfg.out);
  const std::string path = cfg.out + "/resolved_config.json";
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write resolved config: " + path);
  f << j.dump(2) << "\n";
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return cfg.out.empty() ? name : cfg.out + "/" + name;
}

simscore::EmbeddingProvider make_provider(const RunConfig& cfg) {
  return cfg.vectors_path.empty() ? simscore::EmbeddingProvider::hashed_ngram()
                                  : simscore::EmbeddingProvider::from_wordvec_file(cfg.vectors_path);
}

corpus::LoadOptions load_options(const RunConfig& cfg) {
  corpus::LoadOptions o;
  o.images_per_study = cfg.synth.images_per_study;
  o.rows = cfg.synth.rows;
  o.cols = cfg.synth.cols;
  o.depth = cfg.synth.depth;
  return o;
}

// shared context for reward lambdas; one analysis pipeline per command
struct RewardContext {
  std::shared_ptr<textproc::Lexicon> lexicon;
  std::shared_ptr<simscore::EmbeddingProvider> provider;
  std::shared_ptr<nli::NLIBackend> backend;
  nli::NLILabel fallback = nli::NLILabel::kNeutral;
};

RewardContext make_reward_context(const RunConfig& cfg) {
  RewardContext ctx;
  ctx.lexicon = std::make_shared<textproc::Lexicon>(
      textproc::Lexicon::from_json_file(cfg.lexicon_path));
  ctx.provider = std::make_shared<simscore::EmbeddingProvider>(make_provider(cfg));
  ctx.backend = nli::make_backend(cfg.nli_cfg, *ctx.lexicon, *ctx.provider);
  ctx.fallback = nli::label_from_string(cfg.entnli_fallback);
  return ctx;
}

trainer::RewardFn make_reward(const std::string& name, const RewardContext& ctx) {
  if (name == "bertscore") {
    auto provider = ctx.provider;
    return [provider](const std::string& gen, const std::string& ref) {
      const auto ct = textproc::tokenize(gen);
      const auto rt = textproc::tokenize(ref);
      if (ct.empty() && rt.empty()) return 1.0;  // mirror the empty-set reward convention
      if (ct.empty() || rt.empty()) return 0.0;
      return simscore::bertscore(ct, rt, *provider).f1;
    };
  }
  if (name == "fact_ent") {
    auto lexicon = ctx.lexicon;
    return [lexicon](const std::string& gen, const std::string& ref) {
      return rewards::fact_ent(textproc::analyze_report(gen, *lexicon),
                               textproc::analyze_report(ref, *lexicon))
          .value;
    };
  }
  if (name == "fact_entnli") {
    auto lexicon = ctx.lexicon;
    auto provider = ctx.provider;
    auto backend = ctx.backend;
    rewards::EntnliOptions options{ctx.fallback};
    return [lexicon, provider, backend, options](const std::string& gen, const std::string& ref) {
      return rewards::fact_entnli(textproc::analyze_report(gen, *lexicon),
                                  textproc::analyze_report(ref, *lexicon), *backend, *provider,
                                  options)
          .value;
    };
  }
  throw ConfigError("unknown reward metric: " + name +
                    " (expected bertscore, fact_ent or fact_entnli)");
}

// id -> findings text, preserving first-file order for iteration
std::vector<std::pair<std::string, std::string>> aligned_texts(const std::string& gen_path,
                                                               const std::string& ref_path,
                                                               const RunConfig& cfg,
                                                               std::vector<std::string>* gen_out) {
  const corpus::StudySet gen = corpus::load_reports(gen_path, load_options(cfg));
  const corpus::StudySet ref = corpus::load_reports(ref_path, load_options(cfg));
  std::map<std::string, std::string> ref_by_id;
  for (const auto& s : ref.studies) ref_by_id[s.id] = s.reference;
  std::vector<std::pair<std::string, std::string>> pairs;  // (gen text, ref text)
  if (gen_out) gen_out->clear();
  for (const auto& s : gen.studies) {
    auto it = ref_by_id.find(s.id);
    if (it == ref_by_id.end()) {
      throw ValidationError("report id " + s.id + " missing from reference file " + ref_path);
    }
    pairs.emplace_back(s.reference, it->second);
    if (gen_out) gen_out->push_back(s.id);
  }
  if (pairs.empty()) throw ValidationError("no reports to score in " + gen_path);
  return pairs;
}

const corpus::StudySet& pick_split(const corpus::SplitResult& split, const std::string& name,
                                   const corpus::StudySet& whole) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  if (name == "all") return whole;
  throw ConfigError("unknown split: " + name + " (expected train, val, test or all)");
}

int do_synth(RunConfig& cfg) {
  cfg.synth.seed = cfg.seed;
  if (cfg.synth.findings.empty()) cfg.synth.findings = corpus::default_findings(cfg.synth.depth);
  std::vector<corpus::PlantedStudy> planted;
  const corpus::StudySet set = corpus::synth_generate(cfg.synth, &planted);
  echo_config(cfg, "synth");

  const std::string studies_path = out_path(cfg, "studies.jsonl");
  corpus::save_reports(set, studies_path);
  const std::string planted_path = out_path(cfg, "planted.jsonl");
  std::ofstream pf(planted_path, std::ios::trunc);
  if (!pf) throw IoError("cannot write " + planted_path);
  for (std::size_t i = 0; i < set.studies.size(); ++i) {
    json j{{"id", set.studies[i].id},
           {"positive", planted[i].positive},
           {"negated", planted[i].negated}};
    pf << j.dump() << "\n";
  }
  std::cout << "wrote " << set.studies.size() << " studies (vocab " << set.vocab.size()
            << ") to " << studies_path << "\n";
  return 0;
}

int do_nli_pairs(RunConfig& cfg, const std::string& corpus_path, std::size_t eval_candidates) {
  const corpus::StudySet set = corpus::load_reports(corpus_path, load_options(cfg));
  const textproc::Lexicon lexicon = textproc::Lexicon::from_json_file(cfg.lexicon_path);
  const simscore::EmbeddingProvider provider = make_provider(cfg);
  echo_config(cfg, "nli-pairs");

  nlipairs::GenerationResult result = nlipairs::generate_training_pairs(
      set, cfg.quotas, lexicon, provider, cfg.seed, cfg.pair_budget, cfg.match);
  const std::string pairs_path = out_path(cfg, "pairs.jsonl");
  nlipairs::save_pairs_jsonl(result.pairs, pairs_path);

  std::map<std::string, std::size_t> by_rule;
  for (const auto& p : result.pairs) ++by_rule[nlipairs::to_string(p.rule)];
  for (const char* rule : {"E1", "N1", "N2", "N3", "N4", "C1"}) {
    std::cout << "rule " << rule << ": " << by_rule[rule] << " pairs\n";
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  if (eval_candidates > 0) {
    nlipairs::EvalSampleResult eval =
        nlipairs::sample_eval_candidates(set, eval_candidates, provider, cfg.seed, cfg.pair_budget);
    const std::string cand_path = out_path(cfg, "eval_candidates.jsonl");
    nlipairs::save_candidates_jsonl(eval.pairs, cand_path);
    for (const auto& w : eval.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "wrote " << eval.pairs.size() << " eval candidates to " << cand_path << "\n";
  }
  std::cout << "wrote " << result.pairs.size() << " pairs to " << pairs_path << "\n";
  return 0;
}

int do_train(RunConfig& cfg, const std::string& corpus_path) {
  cfg.train.seed = cfg.seed;
  const corpus::StudySet set = corpus::load_reports(corpus_path, load_options(cfg));
  const corpus::SplitResult split = corpus::split_dataset(set, cfg.split, cfg.seed);
  cfg.model.vocab = set.vocab.size();
  cfg.model.images = cfg.synth.images_per_study;
  cfg.model.grid_positions = cfg.synth.rows * cfg.synth.cols;
  cfg.model.grid_depth = cfg.synth.depth;
  cfg.model.validate();
  echo_config(cfg, "train");

  m2trans::ModelParams params = m2trans::ModelParams::init(cfg.model, cfg.seed);
  trainer::RunOptions options;
  options.phase = trainer::Phase::kNll;
  options.config = cfg.train;
  options.checkpoint_path = out_path(cfg, "model.ckpt");
  trainer::TrainingReport report = trainer::run_training(split.train, split.val, params, options);
  checkpoint::save_params(report.best, options.checkpoint_path);
  trainer::write_report_jsonl(report.records, out_path(cfg, "train_report.jsonl"));

  const double acc = split.val.studies.empty()
                         ? 0.0
                         : trainer::next_token_accuracy(split.val, report.best);
  std::cout << "best epoch " << report.best_epoch << " val_nll " << report.best_metric << "\n";
  std::cout << "val next-token accuracy " << acc << "\n";
  std::cout << "checkpoint " << options.checkpoint_path << "\n";
  return 0;
}

int do_finetune(RunConfig& cfg, const std::string& corpus_path, const std::string& init_path) {
  cfg.train.seed = cfg.seed;
  const corpus::StudySet set = corpus::load_reports(corpus_path, load_options(cfg));
  const corpus::SplitResult split = corpus::split_dataset(set, cfg.split, cfg.seed);
  cfg.model.vocab = set.vocab.size();
  cfg.model.images = cfg.synth.images_per_study;
  cfg.model.grid_positions = cfg.synth.rows * cfg.synth.cols;
  cfg.model.grid_depth = cfg.synth.depth;
  cfg.model.validate();
  echo_config(cfg, "finetune");

  m2trans::ModelParams params = checkpoint::load_params(init_path, cfg.model);
  RewardContext ctx = make_reward_context(cfg);
  trainer::RunOptions options;
  options.phase = trainer::Phase::kJoint;
  options.config = cfg.train;
  options.weights = cfg.weights;
  if (cfg.weights.rl_nlg > 0.0) options.nlg_reward = make_reward(cfg.reward_nlg, ctx);
  if (cfg.weights.rl_fact > 0.0) options.fact_reward = make_reward(cfg.reward_fact, ctx);
  options.lexicon = ctx.lexicon.get();
  options.checkpoint_path = out_path(cfg, "model.ckpt");
  options.val_decode_limit = cfg.val_decode_limit;

  trainer::TrainingReport report = trainer::run_training(split.train, split.val, params, options);
  checkpoint::save_params(report.best, options.checkpoint_path);
  trainer::write_report_jsonl(report.records, out_path(cfg, "finetune_report.jsonl"));
  std::cout << "best epoch " << report.best_epoch << " val_clinical_f1 " << report.best_metric
            << "\n";
  std::cout << "checkpoint " << options.checkpoint_path << "\n";
  return 0;
}

int do_generate(RunConfig& cfg, const std::string& corpus_path, const std::string& ckpt_path,
                const std::string& split_name, const std::string& mode_name,
                std::size_t beam_width, double temperature) {
  const corpus::StudySet set = corpus::load_reports(corpus_path, load_options(cfg));
  const corpus::SplitResult split = corpus::split_dataset(set, cfg.split, cfg.seed);
  const corpus::StudySet& studies = pick_split(split, split_name, set);
  if (studies.studies.empty()) throw ValidationError("split " + split_name + " is empty");

  m2trans::ModelParams params = checkpoint::load_params(ckpt_path);
  if (params.config.vocab != set.vocab.size()) {
    throw ConfigError("checkpoint vocab " + std::to_string(params.config.vocab) +
                      " does not match corpus vocab " + std::to_string(set.vocab.size()));
  }
  echo_config(cfg, "generate");

  m2trans::DecodeOptions decode_options;
  if (mode_name == "greedy") decode_options.mode = m2trans::DecodeMode::kGreedy;
  else if (mode_name == "sample") decode_options.mode = m2trans::DecodeMode::kSample;
  else if (mode_name == "beam") decode_options.mode = m2trans::DecodeMode::kBeam;
  else throw ConfigError("unknown decode mode: " + mode_name);
  decode_options.seed = cfg.seed;
  decode_options.temperature = temperature;
  decode_options.beam_width = beam_width;

  const std::string gen_path = out_path(cfg, "generated.jsonl");
  std::ofstream f(gen_path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + gen_path);
  double log_prob_sum = 0.0;
  for (std::size_t i = 0; i < studies.studies.size(); ++i) {
    const corpus::Study& study = studies.studies[i];
    m2trans::DecodeOptions per_study = decode_options;
    per_study.seed = cfg.seed ^ ((i + 1) * 0x9e3779b97f4a7c15ull);
    const m2trans::DecodeResult result = m2trans::decode(study.images, params, per_study);
    log_prob_sum += result.log_prob;
    json j{{"id", study.id}, {"findings", corpus::decode_ids(result.ids, set.vocab)}};
    f << j.dump() << "\n";
  }
  std::cout << "decoded " << studies.studies.size() << " reports (" << mode_name << ") to "
            << gen_path << "\n";
  std::cout << "mean log-prob " << log_prob_sum / static_cast<double>(studies.studies.size())
            << "\n";
  return 0;
}

int do_reward(RunConfig& cfg, const std::string& gen_path, const std::string& ref_path,
              const std::string& metric) {
  RewardContext ctx = make_reward_context(cfg);
  const trainer::RewardFn fn = make_reward(metric, ctx);
  std::vector<std::string> ids;
  const auto pairs = aligned_texts(gen_path, ref_path, cfg, &ids);
  echo_config(cfg, "reward");

  std::ofstream f;
  if (!cfg.out.empty()) {
    const std::string path = out_path(cfg, "rewards.jsonl");
    f.open(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double score = fn(pairs[i].first, pairs[i].second);
    sum += score;
    if (f.is_open()) {
      json j{{"id", ids[i]}, {"score", score}};
      f << j.dump() << "\n";
    }
  }
  std::cout << "mean " << metric << " over " << pairs.size() << " reports: "
            << sum / static_cast<double>(pairs.size()) << "\n";
  return 0;
}

int do_evaluate(RunConfig& cfg, const std::string& gen_path, const std::string& ref_path) {
  const textproc::Lexicon lexicon = textproc::Lexicon::from_json_file(cfg.lexicon_path);
  const auto pairs = aligned_texts(gen_path, ref_path, cfg, nullptr);
  echo_config(cfg, "evaluate");

  std::vector<cliniceval::ObservationStatus> pred, ref;
  for (const auto& [gen_text, ref_text] : pairs) {
    pred.push_back(
        cliniceval::label_observations(textproc::analyze_report(gen_text, lexicon), lexicon));
    ref.push_back(
        cliniceval::label_observations(textproc::analyze_report(ref_text, lexicon), lexicon));
  }
  const cliniceval::MicroMetrics micro = cliniceval::micro_metrics(pred, ref);

  json per_observation = json::object();
  const auto& names = cliniceval::observation_names();
  for (std::size_t o = 0; o < names.size(); ++o) {
    std::vector<cliniceval::ObservationStatus> p1(pred.size()), r1(ref.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      p1[i].fill(cliniceval::Status::kNotMentioned);
      r1[i].fill(cliniceval::Status::kNotMentioned);
      p1[i][0] = pred[i][o];
      r1[i][0] = ref[i][o];
    }
    // single-column confusion; the filler columns match identically on both
    // sides, so only the accuracy needs rescaling back to the column
    cliniceval::MicroMetrics m = cliniceval::micro_metrics(p1, r1);
    const double cells = static_cast<double>(pred.size() * cliniceval::kNumObservations);
    const double matched = m.accuracy * cells - static_cast<double>(pred.size()) *
                                                    (cliniceval::kNumObservations - 1);
    per_observation[names[o]] = {{"precision", m.precision},
                                 {"recall", m.recall},
                                 {"f1", m.f1},
                                 {"accuracy", matched / static_cast<double>(pred.size())}};
  }
  json out{{"micro",
            {{"precision", micro.precision},
             {"recall", micro.recall},
             {"f1", micro.f1},
             {"accuracy", micro.accuracy}}},
           {"per_observation", per_observation},
           {"reports", pairs.size()}};
  std::cout << out.dump(2) << "\n";
  if (!cfg.out.empty()) {
    const std::string path = out_path(cfg, "metrics.json");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << out.dump(2) << "\n";
  }
  return 0;
}

int do_correlate(RunConfig& cfg, const std::string& gen_path, const std::string& ref_path,
                 const std::string& metrics_csv) {
  RewardContext ctx = make_reward_context(cfg);
  const auto pairs = aligned_texts(gen_path, ref_path, cfg, nullptr);
  echo_config(cfg, "correlate");

  std::vector<std::string> metric_names;
  std::stringstream ss(metrics_csv);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) metric_names.push_back(item);
  }
  if (metric_names.empty()) throw ConfigError("no metrics requested");

  std::vector<double> accuracy;
  for (const auto& [gen_text, ref_text] : pairs) {
    const auto p = cliniceval::label_observations(
        textproc::analyze_report(gen_text, *ctx.lexicon), *ctx.lexicon);
    const auto r = cliniceval::label_observations(
        textproc::analyze_report(ref_text, *ctx.lexicon), *ctx.lexicon);
    accuracy.push_back(cliniceval::report_accuracy(p, r));
  }

  std::map<std::string, std::vector<double>> values;
  for (const auto& name : metric_names) {
    const trainer::RewardFn fn = make_reward(name, ctx);
    std::vector<double>& v = values[name];
    for (const auto& [gen_text, ref_text] : pairs) v.push_back(fn(gen_text, ref_text));
  }
  const std::map<std::string, double> rho = cliniceval::correlate_rewards(values, accuracy);

  json out{{"correlations", rho}, {"reports", pairs.size()}};
  std::cout << out.dump(2) << "\n";
  if (!cfg.out.empty()) {
    const std::string path = out_path(cfg, "correlations.json");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << out.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
  // the config file provides defaults, so it must load before flag parsing
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }

  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  if (const char* env = std::getenv("FACTHARNESS_NLI_URL")) {
    if (*env) cfg.nli_cfg.endpoint = env;  // flags still win over the environment
  }

  CLI::App app{"meshed-memory report generation with factual-consistency rewards"};
  app.require_subcommand(1);
  std::string config_flag;
  app.add_option("--config", config_flag, "JSON config file (defaults for all flags)");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_flag, "JSON config file (defaults for all flags)");
    sub->add_option("--seed", cfg.seed, "seed for everything this run does");
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--lexicon", cfg.lexicon_path, "lexicon JSON path");
    sub->add_option("--vectors", cfg.vectors_path, "word-vector file (empty = hashed n-grams)");
    sub->add_option("--nli-backend", [&cfg](const std::vector<std::string>& v) {
      const std::string& s = v[0];
      if (s == "heuristic") cfg.nli_cfg.kind = nli::BackendKind::kHeuristic;
      else if (s == "remote") cfg.nli_cfg.kind = nli::BackendKind::kRemote;
      else if (s == "constant") cfg.nli_cfg.kind = nli::BackendKind::kConstant;
      else return false;
      return true;
    }, "NLI backend: heuristic, remote or constant");
    sub->add_option("--nli-endpoint", cfg.nli_cfg.endpoint, "remote NLI endpoint URL");
  };

  int code = 0;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic study corpus");
  add_common(synth);
  synth->add_option("--num-studies", cfg.synth.num_studies, "studies to generate");
  synth->add_option("--positive-rate", cfg.synth.positive_rate, "per-finding positive rate");
  synth->add_option("--negated-mention-rate", cfg.synth.negated_mention_rate,
                    "absent findings mentioned as negated");
  synth->add_option("--min-sentences", cfg.synth.min_sentences, "min sentences per report");
  synth->add_option("--max-sentences", cfg.synth.max_sentences, "max sentences per report");
  synth->add_flag("--deterministic-templates", cfg.synth.deterministic_templates,
                  "always use the first template per finding");
  synth->callback([&] { code = do_synth(cfg); });

  CLI::App* pairs = app.add_subcommand("nli-pairs", "weak-supervision NLI pair generation");
  add_common(pairs);
  std::string pairs_corpus;
  std::size_t eval_candidates = 100;
  pairs->add_option("--corpus", pairs_corpus, "studies JSONL")->required();
  pairs->add_option("--eval-candidates", eval_candidates, "base count of unlabeled eval pairs");
  pairs->add_option("--budget", cfg.pair_budget, "max sampled sentence pairs");
  pairs->add_option("--quota-e1", cfg.quotas.e1, "E1 quota");
  pairs->add_option("--quota-n1", cfg.quotas.n1, "N1 quota");
  pairs->add_option("--quota-n2", cfg.quotas.n2, "N2 quota");
  pairs->add_option("--quota-n3", cfg.quotas.n3, "N3 quota");
  pairs->add_option("--quota-n4", cfg.quotas.n4, "N4 quota");
  pairs->add_option("--quota-c1", cfg.quotas.c1, "C1 quota");
  pairs->add_flag("--c1-prose-direction", cfg.match.c1_subset_s1_in_s2,
                  "use the prose subset direction for C1");
  pairs->callback([&] { code = do_nli_pairs(cfg, pairs_corpus, eval_candidates); });

  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--model-d", cfg.model.d, "model width");
    sub->add_option("--model-heads", cfg.model.heads, "attention heads");
    sub->add_option("--model-layers", cfg.model.n_layers, "encoder/decoder layers");
    sub->add_option("--model-mem", cfg.model.n_mem, "memory slots per encoder layer");
    sub->add_option("--model-maxlen", cfg.model.max_len, "max sequence length");
    sub->add_option("--model-ff", cfg.model.ff, "feed-forward width");
  };
  auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--epochs", cfg.train.epochs, "training epochs");
    sub->add_option("--batch-size", cfg.train.batch_size, "batch size");
    sub->add_option("--warmup-steps", cfg.train.warmup_steps, "NLL warmup steps");
    sub->add_option("--lr-scale", cfg.train.lr_scale, "warmup schedule scale");
    sub->add_option("--rl-lr", cfg.train.rl_learning_rate, "fixed RL learning rate");
    sub->add_option("--clip-norm", cfg.train.clip_norm, "gradient clip norm");
  };

  CLI::App* train = app.add_subcommand("train", "NLL pretraining phase");
  add_common(train);
  add_model_flags(train);
  add_train_flags(train);
  std::string train_corpus;
  train->add_option("--corpus", train_corpus, "studies JSONL")->required();
  train->callback([&] { code = do_train(cfg, train_corpus); });

  CLI::App* finetune = app.add_subcommand("finetune", "JOINT self-critical fine-tuning phase");
  add_common(finetune);
  add_model_flags(finetune);
  add_train_flags(finetune);
  std::string finetune_corpus, finetune_init;
  finetune->add_option("--corpus", finetune_corpus, "studies JSONL")->required();
  finetune->add_option("--init", finetune_init, "initial checkpoint (required for JOINT)")
      ->required();
  finetune->add_option("--lambda-nll", cfg.weights.nll, "λ1 NLL weight");
  finetune->add_option("--lambda-nlg", cfg.weights.rl_nlg, "λ2 NLG-reward weight");
  finetune->add_option("--lambda-fact", cfg.weights.rl_fact, "λ3 fact-reward weight");
  finetune->add_option("--reward-nlg", cfg.reward_nlg, "NLG reward metric");
  finetune->add_option("--reward-fact", cfg.reward_fact, "factual reward metric");
  finetune->add_option("--temperature", cfg.train.sample_temperature, "SCST sample temperature");
  finetune->add_option("--val-decode-limit", cfg.val_decode_limit,
                       "cap beam-decoded validation studies (0 = all)");
  finetune->callback([&] { code = do_finetune(cfg, finetune_corpus, finetune_init); });

  CLI::App* generate = app.add_subcommand("generate", "decode reports for a split");
  add_common(generate);
  std::string gen_corpus, gen_ckpt, gen_split = "test", gen_mode = "beam";
  std::size_t gen_beam_width = 4;
  double gen_temperature = 1.0;
  generate->add_option("--corpus", gen_corpus, "studies JSONL")->required();
  generate->add_option("--checkpoint", gen_ckpt, "model checkpoint")->required();
  generate->add_option("--split", gen_split, "train, val, test or all");
  generate->add_option("--mode", gen_mode, "beam, greedy or sample");
  generate->add_option("--beam-width", gen_beam_width, "beam width");
  generate->add_option("--temperature", gen_temperature, "sampling temperature");
  generate->callback([&] {
    code = do_generate(cfg, gen_corpus, gen_ckpt, gen_split, gen_mode, gen_beam_width,
                       gen_temperature);
  });

  CLI::App* reward = app.add_subcommand("reward", "score generated vs reference reports");
  add_common(reward);
  std::string reward_gen, reward_ref, reward_metric = "fact_ent";
  reward->add_option("--gen", reward_gen, "generated reports JSONL")->required();
  reward->add_option("--ref", reward_ref, "reference reports JSONL")->required();
  reward->add_option("--metric", reward_metric, "bertscore, fact_ent or fact_entnli");
  reward->callback([&] { code = do_reward(cfg, reward_gen, reward_ref, reward_metric); });

  CLI::App* evaluate = app.add_subcommand("evaluate", "clinical observation metrics");
  add_common(evaluate);
  std::string eval_gen, eval_ref;
  evaluate->add_option("--gen", eval_gen, "generated reports JSONL")->required();
  evaluate->add_option("--ref", eval_ref, "reference reports JSONL")->required();
  evaluate->callback([&] { code = do_evaluate(cfg, eval_gen, eval_ref); });

  CLI::App* correlate = app.add_subcommand("correlate", "reward vs clinical-accuracy rank correlation");
  add_common(correlate);
  std::string corr_gen, corr_ref, corr_metrics = "bertscore,fact_ent,fact_entnli";
  correlate->add_option("--gen", corr_gen, "generated reports JSONL")->required();
  correlate->add_option("--ref", corr_ref, "reference reports JSONL")->required();
  correlate->add_option("--metrics", corr_metrics, "comma-separated metric list");
  correlate->callback([&] { code = do_correlate(cfg, corr_gen, corr_ref, corr_metrics); });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints help or the usage error
    return rc == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return code;
}

}  // namespace factharness::cli
