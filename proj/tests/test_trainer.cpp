// Optimizer, schedules, and the SCST joint objective. The three RL contracts
// are the heart of this file: zero advantage moves nothing, positive
// advantage pushes probability onto the sampled sequence, and λ=(1,0,0)
// reproduces the plain NLL step bit for bit.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "factharness/checkpoint.hpp"
#include "factharness/corpus.hpp"
#include "factharness/error.hpp"
#include "factharness/m2trans.hpp"
#include "factharness/trainer.hpp"

using namespace factharness;
using namespace factharness::trainer;

namespace {

m2trans::ModelConfig tiny_cfg(std::size_t vocab, std::size_t max_len = 32) {
  m2trans::ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.n_layers = 1;
  cfg.n_mem = 2;
  cfg.vocab = vocab;
  cfg.max_len = max_len;
  cfg.images = 2;
  cfg.grid_positions = 4;
  cfg.grid_depth = 5;
  cfg.ff = 12;
  return cfg;
}

corpus::StudySet tiny_set(std::size_t n, std::uint64_t seed) {
  corpus::SynthConfig cfg;
  cfg.num_studies = n;
  cfg.images_per_study = 2;
  cfg.rows = 2;
  cfg.cols = 2;
  cfg.depth = 5;
  cfg.findings = corpus::default_findings(cfg.depth);
  cfg.min_sentences = 2;
  cfg.max_sentences = 2;
  cfg.seed = seed;
  return corpus::synth_generate(cfg);
}

bool same_tensors(const m2trans::ModelParams& a, const m2trans::ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (const auto& [name, tensor] : a.tensors) {
    if (b.tensors.at(name).data != tensor.data) return false;
  }
  return true;
}

double sampled_log_prob(const std::vector<std::size_t>& ids,
                        const std::vector<corpus::Grid>& images,
                        const m2trans::ModelParams& params) {
  diffmath::Tape tape;
  m2trans::BoundParams bound(tape, params);
  m2trans::EncodedStack stack = m2trans::encode_images_on_tape(tape, bound, images);
  diffmath::Value ce = m2trans::sequence_ce_sum(tape, bound, stack, ids);
  return -tape.value(ce).data[0];
}

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("loss weight presets validate; malformed weights do not") {
  CHECK_NOTHROW(LossWeights::nll_only().validate());
  CHECK_NOTHROW(LossWeights::nll_bs().validate());
  CHECK_NOTHROW(LossWeights::nll_bs_fact().validate());
  CHECK(LossWeights::nll_bs_fact().rl_fact == 0.495);

  CHECK_THROWS_AS((LossWeights{-0.1, 0.6, 0.5}.validate()), ConfigError);
  CHECK_THROWS_AS((LossWeights{0.5, 0.5, 0.5}.validate()), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr_scale = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.clip_norm = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.sample_temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("warmup schedule follows the inverse-sqrt formula exactly") {
  const std::size_t w = 500, d = 64;
  for (std::size_t step : {1ul, 17ul, 499ul, 500ul, 501ul, 5000ul}) {
    const double s = static_cast<double>(step);
    const double expected = 1.0 / std::sqrt(static_cast<double>(d)) *
                            std::min(1.0 / std::sqrt(s), s / (500.0 * std::sqrt(500.0)));
    CHECK(warmup_lr(step, w, d, 1.0) == expected);
  }
  // scale is a plain multiplier; step 0 clamps to 1
  CHECK(warmup_lr(100, w, d, 2.5) == 2.5 * warmup_lr(100, w, d, 1.0));
  CHECK(warmup_lr(0, w, d, 1.0) == warmup_lr(1, w, d, 1.0));
  // ramps up before the corner, decays after it
  CHECK(warmup_lr(100, w, d, 1.0) < warmup_lr(400, w, d, 1.0));
  CHECK(warmup_lr(600, w, d, 1.0) < warmup_lr(500, w, d, 1.0));
  // zero warmup degenerates to pure decay
  CHECK(warmup_lr(9, 0, 64, 1.0) == 1.0 / 8.0 / 3.0);
}

TEST_CASE("global norm and clipping") {
  std::map<std::string, Tensor> grads;
  grads["a"] = Tensor{{1}, {3.0}};
  grads["b"] = Tensor{{1}, {4.0}};
  CHECK(global_norm(grads) == 5.0);

  clip_gradients(grads, 10.0);  // under the limit: untouched
  CHECK(grads["a"].data[0] == 3.0);

  clip_gradients(grads, 2.5);
  CHECK(grads["a"].data[0] == doctest::Approx(1.5));
  CHECK(grads["b"].data[0] == doctest::Approx(2.0));
  CHECK(global_norm(grads) == doctest::Approx(2.5));

  std::map<std::string, Tensor> zero;
  zero["z"] = Tensor{{2}, {0.0, 0.0}};
  clip_gradients(zero, 1.0);
  CHECK(zero["z"].data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("adam matches a hand-stepped reference for two updates") {
  const auto cfg = tiny_cfg(9);
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 1);
  const double p0 = params.at("out_proj.b").data[0];
  const double p1 = params.at("out_proj.b").data[1];

  Adam opt(params, 0.9, 0.999, 1e-8);
  std::map<std::string, Tensor> grads;
  grads["out_proj.b"] = Tensor::zeros({cfg.vocab});
  grads["out_proj.b"].data[0] = 0.5;
  grads["out_proj.b"].data[1] = -2.0;

  // reference implementation, same operation order as the optimizer
  auto reference = [](double p, double g1, double g2, double lr) {
    double m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      const double g = t == 1 ? g1 : g2;
      m = 0.9 * m + (1.0 - 0.9) * g;
      v = 0.999 * v + (1.0 - 0.999) * g * g;
      const double mhat = m / (1.0 - std::pow(0.9, t));
      const double vhat = v / (1.0 - std::pow(0.999, t));
      p -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
    return p;
  };

  opt.step(params, grads, 0.01);
  std::map<std::string, Tensor> grads2 = grads;
  grads2["out_proj.b"].data[0] = -1.0;
  grads2["out_proj.b"].data[1] = 0.25;
  opt.step(params, grads2, 0.01);

  CHECK(opt.steps() == 2);
  CHECK(params.at("out_proj.b").data[0] == reference(p0, 0.5, -1.0, 0.01));
  CHECK(params.at("out_proj.b").data[1] == reference(p1, -2.0, 0.25, 0.01));
  // untouched names keep their values
  CHECK(params.at("out_proj.b").data[2] == m2trans::ModelParams::init(cfg, 1).at("out_proj.b").data[2]);
}

TEST_CASE("batch_from_studies encodes, aligns, truncates, and range-checks") {
  corpus::StudySet set = tiny_set(6, 3);
  const auto cfg = tiny_cfg(set.vocab.size());

  Batch batch = batch_from_studies(set, {0, 2, 4}, cfg);
  REQUIRE(batch.examples.size() == 3);
  REQUIRE(batch.references.size() == 3);
  CHECK(batch.references[1] == set.studies[2].reference);
  for (const auto& ex : batch.examples) {
    CHECK(ex.ref_ids.front() == corpus::kBosId);
    CHECK(ex.ref_ids.size() <= cfg.max_len);
  }

  // a tight max_len forces truncation but keeps the EOS terminator
  auto tight = tiny_cfg(set.vocab.size(), 5);
  Batch cut = batch_from_studies(set, {0}, tight);
  CHECK(cut.examples[0].ref_ids.size() == 5);
  CHECK(cut.examples[0].ref_ids.back() == corpus::kEosId);

  CHECK_THROWS_AS(batch_from_studies(set, {99}, cfg), ValidationError);
}

TEST_CASE("repeated NLL steps reduce the loss") {
  corpus::StudySet set = tiny_set(4, 11);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 2);
  Adam opt(params);
  Batch batch = batch_from_studies(set, {0, 1, 2, 3}, cfg);

  const double first = nll_update(batch, params, opt, 5e-3, 5.0).loss;
  double last = first;
  for (int i = 0; i < 29; ++i) last = nll_update(batch, params, opt, 5e-3, 5.0).loss;
  CHECK(last < first);
  CHECK(opt.steps() == 30);
}

TEST_CASE("zero advantage produces exactly zero RL gradient and no update") {
  corpus::StudySet set = tiny_set(4, 21);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 5);
  const m2trans::ModelParams before = params;
  Adam opt(params);
  Batch batch = batch_from_studies(set, {0, 1, 2, 3}, cfg);

  RewardFn constant = [](const std::string&, const std::string&) { return 0.7; };
  StepMetrics m = joint_update(batch, params, opt, 1e-3, LossWeights{0.0, 0.5, 0.5}, constant,
                               constant, set.vocab, 1.0, 5.0, 99);

  CHECK(!m.aborted);
  CHECK(m.loss == 0.0);
  CHECK(m.grad_norm == 0.0);
  CHECK(m.skipped == 0);
  CHECK(m.mean_reward_nlg == 0.7);
  CHECK(m.mean_reward_fact == 0.7);
  CHECK(opt.steps() == 0);                // the optimizer never ran
  CHECK(same_tensors(params, before));    // parameters bit-identical
}

TEST_CASE("positive advantage raises the sampled sequence's log-probability") {
  corpus::StudySet set = tiny_set(2, 31);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 8);
  Batch batch = batch_from_studies(set, {0}, cfg);
  const auto& images = batch.examples[0].images;

  // find a step seed whose internal sample diverges from the greedy decode
  std::uint64_t step_seed = 0;
  m2trans::DecodeResult sampled;
  std::string sampled_text;
  for (std::uint64_t cand = 1; cand < 64; ++cand) {
    const std::uint64_t study_seed = cand ^ (1ull * 0x9e3779b97f4a7c15ull);
    auto greedy = m2trans::decode(images, params, {m2trans::DecodeMode::kGreedy});
    auto s = m2trans::decode(images, params,
                             {m2trans::DecodeMode::kSample, study_seed, 1.0});
    if (corpus::decode_ids(s.ids, set.vocab) != corpus::decode_ids(greedy.ids, set.vocab)) {
      step_seed = cand;
      sampled = s;
      sampled_text = corpus::decode_ids(s.ids, set.vocab);
      break;
    }
  }
  REQUIRE(step_seed != 0);

  // reward the sampled text alone: advantage is +1 for the draw, 0 baseline
  RewardFn favor_sample = [&](const std::string& gen, const std::string&) {
    return gen == sampled_text ? 1.0 : 0.0;
  };

  const double logp_before = sampled_log_prob(sampled.ids, images, params);
  Adam opt(params);
  StepMetrics m = joint_update(batch, params, opt, 1e-3, LossWeights{0.0, 1.0, 0.0},
                               favor_sample, {}, set.vocab, 1.0, 5.0, step_seed);
  const double logp_after = sampled_log_prob(sampled.ids, images, params);

  CHECK(!m.aborted);
  CHECK(m.grad_norm > 0.0);
  CHECK(opt.steps() == 1);
  CHECK(logp_after > logp_before);
}

TEST_CASE("weights (1,0,0) reproduce the pure NLL step bit for bit") {
  corpus::StudySet set = tiny_set(5, 41);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams joint_params = m2trans::ModelParams::init(cfg, 13);
  m2trans::ModelParams nll_params = joint_params;
  Adam joint_opt(joint_params), nll_opt(nll_params);
  Batch batch = batch_from_studies(set, {0, 1, 2, 3, 4}, cfg);

  for (int step = 0; step < 3; ++step) {
    StepMetrics a = joint_update(batch, joint_params, joint_opt, 0.01, LossWeights::nll_only(),
                                 {}, {}, set.vocab, 1.0, 5.0, 7 + step);
    StepMetrics b = nll_update(batch, nll_params, nll_opt, 0.01, 5.0);
    CHECK(a.loss == b.loss);
    CHECK(a.nll == b.nll);
    CHECK(a.grad_norm == b.grad_norm);
  }
  CHECK(same_tensors(joint_params, nll_params));
}

TEST_CASE("reward failures skip the study's RL term without killing the step") {
  corpus::StudySet set = tiny_set(3, 51);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 3);
  const m2trans::ModelParams before = params;
  Adam opt(params);
  Batch batch = batch_from_studies(set, {0, 1, 2}, cfg);

  RewardFn broken = [](const std::string&, const std::string&) -> double {
    throw RemoteError("scorer offline");
  };

  // RL-only weights: every study fails, so nothing at all should move
  StepMetrics m = joint_update(batch, params, opt, 1e-3, LossWeights{0.0, 1.0, 0.0}, broken, {},
                               set.vocab, 1.0, 5.0, 17);
  CHECK(m.skipped == 3);
  CHECK(opt.steps() == 0);
  CHECK(same_tensors(params, before));

  // with an NLL component the step still happens
  m = joint_update(batch, params, opt, 1e-3, LossWeights{0.01, 0.99, 0.0}, broken, {}, set.vocab,
                   1.0, 5.0, 18);
  CHECK(m.skipped == 3);
  CHECK(m.nll > 0.0);
  CHECK(opt.steps() == 1);
  CHECK(!same_tensors(params, before));
}

TEST_CASE("joint update validates weights, rewards, and batch alignment") {
  corpus::StudySet set = tiny_set(2, 61);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 3);
  Adam opt(params);
  Batch batch = batch_from_studies(set, {0}, cfg);

  CHECK_THROWS_AS(joint_update(batch, params, opt, 1e-3, LossWeights{0.5, 0.5, 0.5}, {}, {},
                               set.vocab, 1.0, 5.0, 1),
                  ConfigError);
  // rl weight without a reward function
  CHECK_THROWS_AS(joint_update(batch, params, opt, 1e-3, LossWeights{0.0, 1.0, 0.0}, {}, {},
                               set.vocab, 1.0, 5.0, 1),
                  ConfigError);
  Batch skewed = batch;
  skewed.references.clear();
  CHECK_THROWS_AS(joint_update(skewed, params, opt, 1e-3, LossWeights::nll_only(), {}, {},
                               set.vocab, 1.0, 5.0, 1),
                  ValidationError);
  CHECK_THROWS_AS(joint_update(Batch{}, params, opt, 1e-3, LossWeights::nll_only(), {}, {},
                               set.vocab, 1.0, 5.0, 1),
                  ValidationError);
}

TEST_CASE("non-finite loss aborts before any parameter mutation") {
  corpus::StudySet set = tiny_set(2, 71);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 3);
  params.at("out_proj.b").data[0] = std::numeric_limits<double>::infinity();
  const m2trans::ModelParams before = params;
  Adam opt(params);
  Batch batch = batch_from_studies(set, {0, 1}, cfg);

  StepMetrics m = nll_update(batch, params, opt, 1e-3, 5.0);
  CHECK(m.aborted);
  CHECK(opt.steps() == 0);
  CHECK(same_tensors(params, before));
}

TEST_CASE("scst sample reports both decodes and their advantage") {
  corpus::StudySet set = tiny_set(2, 81);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 4);
  const auto& study = set.studies[0];

  RewardFn len_reward = [](const std::string& gen, const std::string&) {
    return gen.empty() ? 0.0 : 1.0 / (1.0 + static_cast<double>(gen.size()));
  };
  ScstSample s = scst_gradient_weight(study.images, params, len_reward, study.reference,
                                      set.vocab, 12345, 1.0);
  auto greedy = m2trans::decode(study.images, params, {m2trans::DecodeMode::kGreedy});
  CHECK(s.greedy.ids == greedy.ids);
  CHECK(s.greedy_text == corpus::decode_ids(greedy.ids, set.vocab));
  CHECK(s.advantage == s.reward_sampled - s.reward_greedy);
}

TEST_CASE("validation metrics: aggregate NLL and next-token accuracy") {
  corpus::StudySet set = tiny_set(4, 91);
  const auto cfg = tiny_cfg(set.vocab.size());
  m2trans::ModelParams params = m2trans::ModelParams::init(cfg, 6);

  // independent recomputation: total CE over total unmasked tokens
  double total_ce = 0.0;
  std::size_t total_tokens = 0;
  for (std::size_t i = 0; i < set.studies.size(); ++i) {
    Batch one = batch_from_studies(set, {i}, cfg);
    diffmath::Tape tape;
    m2trans::BoundParams bound(tape, params);
    auto stack = m2trans::encode_images_on_tape(tape, bound, one.examples[0].images);
    std::size_t count = 0;
    auto ce = m2trans::sequence_ce_sum(tape, bound, stack, one.examples[0].ref_ids, &count);
    total_ce += tape.value(ce).data[0];
    total_tokens += count;
  }
  CHECK(validation_nll(set, params) ==
        doctest::Approx(total_ce / static_cast<double>(total_tokens)).epsilon(1e-12));

  const double acc = next_token_accuracy(set, params);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);

  CHECK_THROWS_AS(validation_nll(corpus::StudySet{}, params), ValidationError);
  CHECK_THROWS_AS(next_token_accuracy(corpus::StudySet{}, params), ValidationError);
}

TEST_CASE("epoch records serialize to parseable JSONL") {
  EpochRecord rec;
  rec.epoch = 3;
  rec.split = "val";
  rec.nll = 1.25;
  rec.mean_reward_nlg = 0.5;
  rec.mean_reward_fact = 0.75;
  rec.clinical_f1 = 0.9;

  nlohmann::json j = nlohmann::json::parse(to_json_line(rec));
  CHECK(j["epoch"] == 3);
  CHECK(j["split"] == "val");
  CHECK(j["nll"] == 1.25);
  CHECK(j["clinical_f1"] == 0.9);

  const std::string path = temp_file("trainer_report.jsonl");
  write_report_jsonl({rec, rec}, path);
  std::ifstream f(path);
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) {
    CHECK_NOTHROW(nlohmann::json::parse(line));
    ++lines;
  }
  CHECK(lines == 2);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(write_report_jsonl({rec}, "/no/such/dir/report.jsonl"), IoError);
}

TEST_CASE("run_training: deterministic per seed, tracks the best validation epoch") {
  corpus::StudySet all = tiny_set(14, 101);
  corpus::SplitResult splits = corpus::split_dataset(all, {0.7, 0.15, 0.15}, 1);

  const auto cfg = tiny_cfg(all.vocab.size());
  RunOptions options;
  options.phase = Phase::kNll;
  options.config.epochs = 2;
  options.config.batch_size = 4;
  options.config.warmup_steps = 10;
  options.config.lr_scale = 1.0;
  options.config.seed = 5;
  options.checkpoint_path = temp_file("trainer_best.fhcp");

  m2trans::ModelParams init = m2trans::ModelParams::init(cfg, 30);
  TrainingReport a = run_training(splits.train, splits.val, init, options);
  TrainingReport b = run_training(splits.train, splits.val, init, options);

  REQUIRE(a.records.size() == 4);  // train + val rows per epoch
  CHECK(a.records[0].split == "train");
  CHECK(a.records[1].split == "val");
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].nll == b.records[i].nll);
  }
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(a.best_epoch >= 1);
  CHECK(same_tensors(a.best, b.best));

  // best checkpoint lands on disk and reloads to the reported params
  m2trans::ModelParams reloaded = checkpoint::load_params(options.checkpoint_path, cfg);
  CHECK(same_tensors(reloaded, a.best));
  std::filesystem::remove(options.checkpoint_path);

  // a different shuffle seed takes a different path
  options.checkpoint_path.clear();
  options.config.seed = 6;
  TrainingReport c = run_training(splits.train, splits.val, init, options);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    if (a.records[i].nll != c.records[i].nll) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("run_training JOINT smoke: constant rewards, fallback best metric") {
  corpus::StudySet all = tiny_set(8, 111);
  corpus::SplitResult splits = corpus::split_dataset(all, {0.75, 0.25, 0.0}, 2);

  const auto cfg = tiny_cfg(all.vocab.size());
  RunOptions options;
  options.phase = Phase::kJoint;
  options.weights = LossWeights::nll_bs_fact();
  options.nlg_reward = [](const std::string&, const std::string&) { return 0.5; };
  options.fact_reward = [](const std::string&, const std::string&) { return 0.5; };
  options.config.epochs = 1;
  options.config.batch_size = 3;
  options.config.schedule = Schedule::kFixed;
  options.config.rl_learning_rate = 1e-4;
  options.val_decode_limit = 2;

  TrainingReport report =
      run_training(splits.train, splits.val, m2trans::ModelParams::init(cfg, 31), options);
  REQUIRE(report.records.size() == 2);
  CHECK(report.records[1].split == "val");
  CHECK(report.records[1].mean_reward_nlg == 0.5);
  CHECK(report.best_epoch == 1);

  // JOINT without the reward functions it was promised is a config error
  options.nlg_reward = nullptr;
  CHECK_THROWS_AS(
      run_training(splits.train, splits.val, m2trans::ModelParams::init(cfg, 31), options),
      ConfigError);
}
