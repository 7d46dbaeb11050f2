#include "factharness/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include <json.hpp>

#include "factharness/checkpoint.hpp"
#include "factharness/cliniceval.hpp"
#include "factharness/error.hpp"
#include "factharness/rng.hpp"

namespace factharness::trainer {

using diffmath::Tape;
using diffmath::Value;
using m2trans::BoundParams;
using m2trans::EncodedStack;
using m2trans::ModelParams;

void LossWeights::validate() const {
  if (nll < 0.0 || rl_nlg < 0.0 || rl_fact < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  const double sum = nll + rl_nlg + rl_fact;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("loss weights sum to " + std::to_string(sum) + ", expected 1");
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (lr_scale <= 0.0) throw ConfigError("lr_scale must be positive");
  if (rl_learning_rate <= 0.0) throw ConfigError("rl_learning_rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
  if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
  if (sample_temperature <= 0.0) throw ConfigError("sample_temperature must be positive");
}

double warmup_lr(std::size_t step, std::size_t warmup_steps, std::size_t d, double scale) {
  if (step == 0) step = 1;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  // warmup 0 degenerates to pure inverse-sqrt decay (s/w^1.5 -> inf)
  const double ramp = warmup_steps == 0 ? std::numeric_limits<double>::infinity()
                                        : s / (w * std::sqrt(w));
  return scale / std::sqrt(static_cast<double>(d)) * std::min(1.0 / std::sqrt(s), ramp);
}

double global_norm(const std::map<std::string, Tensor>& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data) sq += v * v;
  }
  return std::sqrt(sq);
}

void clip_gradients(std::map<std::string, Tensor>& grads, double clip_norm) {
  const double norm = global_norm(grads);
  if (norm <= clip_norm || norm == 0.0) return;
  const double s = clip_norm / norm;
  for (auto& [name, g] : grads) {
    for (double& v : g.data) v *= s;
  }
}

Adam::Adam(const ModelParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, tensor] : params.tensors) {
    m_.emplace(name, Tensor::zeros(tensor.shape));
    v_.emplace(name, Tensor::zeros(tensor.shape));
  }
}

void Adam::step(ModelParams& params, const std::map<std::string, Tensor>& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    if (g.data.size() != p.data.size()) {
      throw ShapeError("gradient/parameter size mismatch for " + name);
    }
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g.data[i];
      v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Batch batch_from_studies(const corpus::StudySet& set, const std::vector<std::size_t>& indices,
                         const m2trans::ModelConfig& config) {
  Batch batch;
  for (std::size_t idx : indices) {
    if (idx >= set.studies.size()) {
      throw ValidationError("study index " + std::to_string(idx) + " out of range");
    }
    const corpus::Study& study = set.studies[idx];
    std::vector<std::size_t> ids = corpus::encode_reference(study.reference, set.vocab);
    if (ids.size() > config.max_len) {  // keep within the position table
      ids.resize(config.max_len);
      ids.back() = corpus::kEosId;
    }
    batch.examples.push_back({study.images, std::move(ids)});
    batch.references.push_back(study.reference);
  }
  return batch;
}

namespace {

std::map<std::string, Tensor> collect_gradients(Tape& tape, const BoundParams& bound) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, value] : bound.values()) {
    grads.emplace(name, tape.grad(value));
  }
  return grads;
}

}  // namespace

StepMetrics nll_update(const Batch& batch, ModelParams& params, Adam& opt, double lr,
                       double clip_norm) {
  StepMetrics metrics;
  Tape tape;
  BoundParams bound(tape, params);
  Value loss = m2trans::nll_loss_on_tape(tape, bound, batch.examples);
  metrics.loss = metrics.nll = tape.value(loss).data[0];
  if (!std::isfinite(metrics.loss)) {
    metrics.aborted = true;  // params untouched, nothing to restore
    return metrics;
  }
  tape.backward(loss);
  std::map<std::string, Tensor> grads = collect_gradients(tape, bound);
  metrics.grad_norm = global_norm(grads);
  if (!std::isfinite(metrics.grad_norm)) {
    metrics.aborted = true;
    return metrics;
  }
  clip_gradients(grads, clip_norm);
  opt.step(params, grads, lr);
  return metrics;
}

ScstSample scst_gradient_weight(const std::vector<corpus::Grid>& images,
                                const ModelParams& params, const RewardFn& reward_fn,
                                const std::string& reference_text,
                                const std::vector<std::string>& vocab, std::uint64_t seed,
                                double temperature) {
  ScstSample s;
  s.greedy = m2trans::decode(images, params, {m2trans::DecodeMode::kGreedy});
  s.sampled =
      m2trans::decode(images, params, {m2trans::DecodeMode::kSample, seed, temperature});
  s.greedy_text = corpus::decode_ids(s.greedy.ids, vocab);
  s.sampled_text = corpus::decode_ids(s.sampled.ids, vocab);
  s.reward_sampled = reward_fn(s.sampled_text, reference_text);
  s.reward_greedy = reward_fn(s.greedy_text, reference_text);
  s.advantage = s.reward_sampled - s.reward_greedy;
  return s;
}

StepMetrics joint_update(const Batch& batch, ModelParams& params, Adam& opt, double lr,
                         const LossWeights& weights, const RewardFn& nlg_reward,
                         const RewardFn& fact_reward, const std::vector<std::string>& vocab,
                         double temperature, double clip_norm, std::uint64_t step_seed) {
  weights.validate();
  if (batch.examples.empty()) throw ValidationError("joint_update: empty batch");
  if (batch.examples.size() != batch.references.size()) {
    throw ValidationError("joint_update: examples/references misaligned");
  }
  const bool want_nlg = weights.rl_nlg > 0.0;
  const bool want_fact = weights.rl_fact > 0.0;
  if (want_nlg && !nlg_reward) throw ConfigError("rl_nlg weight set but no NLG reward given");
  if (want_fact && !fact_reward) throw ConfigError("rl_fact weight set but no fact reward given");

  StepMetrics metrics;
  Tape tape;
  BoundParams bound(tape, params);

  Value nll_total{};
  bool has_nll = false;
  std::size_t tokens = 0;
  Value rl_nlg_total{}, rl_fact_total{};
  bool has_rl_nlg = false, has_rl_fact = false;
  double reward_nlg_sum = 0.0, reward_fact_sum = 0.0;
  std::size_t scored = 0;

  for (std::size_t i = 0; i < batch.examples.size(); ++i) {
    const auto& ex = batch.examples[i];
    EncodedStack stack = m2trans::encode_images_on_tape(tape, bound, ex.images);
    if (weights.nll > 0.0) {
      std::size_t count = 0;
      Value ce = m2trans::sequence_ce_sum(tape, bound, stack, ex.ref_ids, &count);
      tokens += count;
      nll_total = has_nll ? tape.add(nll_total, ce) : ce;
      has_nll = true;
    }
    if (!want_nlg && !want_fact) continue;

    const std::uint64_t study_seed = step_seed ^ ((i + 1) * 0x9e3779b97f4a7c15ull);
    auto greedy = m2trans::decode(ex.images, params, {m2trans::DecodeMode::kGreedy});
    auto sampled = m2trans::decode(
        ex.images, params, {m2trans::DecodeMode::kSample, study_seed, temperature});
    const std::string greedy_text = corpus::decode_ids(greedy.ids, vocab);
    const std::string sampled_text = corpus::decode_ids(sampled.ids, vocab);

    double a_nlg = 0.0, a_fact = 0.0;
    try {
      if (want_nlg) {
        const double rs = nlg_reward(sampled_text, batch.references[i]);
        const double rg = nlg_reward(greedy_text, batch.references[i]);
        a_nlg = rs - rg;
        reward_nlg_sum += rs;
      }
      if (want_fact) {
        const double rs = fact_reward(sampled_text, batch.references[i]);
        const double rg = fact_reward(greedy_text, batch.references[i]);
        a_fact = rs - rg;
        reward_fact_sum += rs;
      }
    } catch (const Error& e) {
      ++metrics.skipped;
      std::cerr << "[trainer] reward failed for study " << i << " in batch: " << e.what()
                << " (RL term skipped)\n";
      continue;
    }
    ++scored;

    // loss term (−a)·logP(ŷ_sp) = a·CE(ŷ_sp); zero advantage adds nothing,
    // so the zero-gradient contract holds exactly
    if (a_nlg == 0.0 && a_fact == 0.0) continue;
    Value ce_sampled = m2trans::sequence_ce_sum(tape, bound, stack, sampled.ids);
    if (a_nlg != 0.0) {
      Value term = tape.scale(ce_sampled, a_nlg);
      rl_nlg_total = has_rl_nlg ? tape.add(rl_nlg_total, term) : term;
      has_rl_nlg = true;
    }
    if (a_fact != 0.0) {
      Value term = tape.scale(ce_sampled, a_fact);
      rl_fact_total = has_rl_fact ? tape.add(rl_fact_total, term) : term;
      has_rl_fact = true;
    }
  }

  Value loss{};
  bool has_loss = false;
  if (weights.nll > 0.0) {
    if (tokens == 0) throw ValidationError("joint_update: no unmasked tokens in batch");
    Value nll_term = tape.scale(nll_total, 1.0 / static_cast<double>(tokens));
    metrics.nll = tape.value(nll_term).data[0];
    loss = tape.scale(nll_term, weights.nll);
    has_loss = true;
  }
  const double inv_batch = 1.0 / static_cast<double>(batch.examples.size());
  if (has_rl_nlg) {
    Value term = tape.scale(rl_nlg_total, inv_batch);
    metrics.rl_nlg = tape.value(term).data[0];
    Value weighted = tape.scale(term, weights.rl_nlg);
    loss = has_loss ? tape.add(loss, weighted) : weighted;
    has_loss = true;
  }
  if (has_rl_fact) {
    Value term = tape.scale(rl_fact_total, inv_batch);
    metrics.rl_fact = tape.value(term).data[0];
    Value weighted = tape.scale(term, weights.rl_fact);
    loss = has_loss ? tape.add(loss, weighted) : weighted;
    has_loss = true;
  }
  if (scored > 0) {
    metrics.mean_reward_nlg = want_nlg ? reward_nlg_sum / static_cast<double>(scored) : 0.0;
    metrics.mean_reward_fact = want_fact ? reward_fact_sum / static_cast<double>(scored) : 0.0;
  }
  if (!has_loss) return metrics;  // all terms degenerate (e.g. every advantage zero, λ1=0)

  metrics.loss = tape.value(loss).data[0];
  if (!std::isfinite(metrics.loss)) {
    metrics.aborted = true;  // abort before any parameter mutation
    return metrics;
  }
  tape.backward(loss);
  std::map<std::string, Tensor> grads = collect_gradients(tape, bound);
  metrics.grad_norm = global_norm(grads);
  if (!std::isfinite(metrics.grad_norm)) {
    metrics.aborted = true;
    return metrics;
  }
  clip_gradients(grads, clip_norm);
  opt.step(params, grads, lr);
  return metrics;
}

double validation_nll(const corpus::StudySet& set, const ModelParams& params) {
  if (set.studies.empty()) throw ValidationError("validation_nll: empty study set");
  double total_ce = 0.0;
  std::size_t total_tokens = 0;
  for (std::size_t i = 0; i < set.studies.size(); ++i) {
    Batch one = batch_from_studies(set, {i}, params.config);
    Tape tape;
    BoundParams bound(tape, params);
    EncodedStack stack = m2trans::encode_images_on_tape(tape, bound, one.examples[0].images);
    std::size_t count = 0;
    Value ce = m2trans::sequence_ce_sum(tape, bound, stack, one.examples[0].ref_ids, &count);
    total_ce += tape.value(ce).data[0];
    total_tokens += count;
  }
  if (total_tokens == 0) throw ValidationError("validation_nll: no unmasked tokens");
  return total_ce / static_cast<double>(total_tokens);
}

double next_token_accuracy(const corpus::StudySet& set, const ModelParams& params) {
  if (set.studies.empty()) throw ValidationError("next_token_accuracy: empty study set");
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < set.studies.size(); ++i) {
    Batch one = batch_from_studies(set, {i}, params.config);
    const std::vector<std::size_t>& ids = one.examples[0].ref_ids;
    std::vector<std::size_t> inputs(ids.begin(), ids.end() - 1);
    Tensor logits = m2trans::decode_logits(inputs, one.examples[0].images, params);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      const std::size_t target = ids[t + 1];
      if (target == corpus::kPadId) continue;
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j) {
        if (logits.at(t, j) > logits.at(t, best)) best = j;
      }
      correct += best == target;
      ++total;
    }
  }
  if (total == 0) throw ValidationError("next_token_accuracy: no unmasked tokens");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::string to_json_line(const EpochRecord& record) {
  nlohmann::json j{{"epoch", record.epoch},
                   {"split", record.split},
                   {"nll", record.nll},
                   {"mean_reward_nlg", record.mean_reward_nlg},
                   {"mean_reward_fact", record.mean_reward_fact},
                   {"clinical_f1", record.clinical_f1}};
  return j.dump();
}

void write_report_jsonl(const std::vector<EpochRecord>& records, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open training report for writing: " + path);
  for (const auto& r : records) f << to_json_line(r) << "\n";
}

namespace {

struct ValSummary {
  double nll = 0.0;
  double clinical_f1 = 0.0;
  double mean_reward_nlg = 0.0;
  double mean_reward_fact = 0.0;
};

ValSummary validate_epoch(const corpus::StudySet& val, const ModelParams& params,
                          const RunOptions& options) {
  ValSummary summary;
  summary.nll = validation_nll(val, params);
  if (options.phase != Phase::kJoint) return summary;

  std::size_t limit = val.studies.size();
  if (options.val_decode_limit > 0) limit = std::min(limit, options.val_decode_limit);
  if (limit == 0) return summary;

  std::vector<cliniceval::ObservationStatus> pred, ref;
  double nlg_sum = 0.0, fact_sum = 0.0;
  for (std::size_t i = 0; i < limit; ++i) {
    const corpus::Study& study = val.studies[i];
    auto beam = m2trans::decode(study.images, params,
                                {m2trans::DecodeMode::kBeam, 0, 1.0, 4});
    const std::string text = corpus::decode_ids(beam.ids, val.vocab);
    if (options.lexicon) {
      pred.push_back(cliniceval::label_observations(
          textproc::analyze_report(text, *options.lexicon), *options.lexicon));
      ref.push_back(cliniceval::label_observations(
          textproc::analyze_report(study.reference, *options.lexicon), *options.lexicon));
    }
    if (options.nlg_reward) nlg_sum += options.nlg_reward(text, study.reference);
    if (options.fact_reward) fact_sum += options.fact_reward(text, study.reference);
  }
  if (options.lexicon) {
    summary.clinical_f1 = cliniceval::micro_metrics(pred, ref).f1;
  }
  summary.mean_reward_nlg = options.nlg_reward ? nlg_sum / static_cast<double>(limit) : 0.0;
  summary.mean_reward_fact = options.fact_reward ? fact_sum / static_cast<double>(limit) : 0.0;
  return summary;
}

}  // namespace

TrainingReport run_training(const corpus::StudySet& train, const corpus::StudySet& val,
                            ModelParams params, const RunOptions& options) {
  const TrainConfig& cfg = options.config;
  cfg.validate();
  params.config.validate();
  if (options.phase == Phase::kJoint) {
    options.weights.validate();
    if (options.weights.rl_nlg > 0.0 && !options.nlg_reward) {
      throw ConfigError("JOINT phase needs an NLG reward for rl_nlg > 0");
    }
    if (options.weights.rl_fact > 0.0 && !options.fact_reward) {
      throw ConfigError("JOINT phase needs a fact reward for rl_fact > 0");
    }
  }
  if (train.studies.empty() && cfg.epochs > 0) {
    throw ValidationError("run_training: empty training set");
  }

  TrainingReport report;
  report.best = params;
  report.best_metric = options.phase == Phase::kNll ? std::numeric_limits<double>::infinity()
                                                    : -std::numeric_limits<double>::infinity();
  report.best_epoch = 0;

  Adam opt(params, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.studies.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg.seed + 0x9e3779b97f4a7c15ull * epoch);
    shuffle_rng.shuffle(order);

    double nll_sum = 0.0, reward_nlg_sum = 0.0, reward_fact_sum = 0.0;
    std::size_t steps_this_epoch = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_size);
      Batch batch = batch_from_studies(
          train, std::vector<std::size_t>(order.begin() + at, order.begin() + end),
          params.config);
      ++step;
      bool warmup = options.phase == Phase::kNll;  // kAuto
      if (cfg.schedule == Schedule::kWarmup) warmup = true;
      if (cfg.schedule == Schedule::kFixed) warmup = false;
      const double lr = warmup ? warmup_lr(step, cfg.warmup_steps, params.config.d, cfg.lr_scale)
                               : cfg.rl_learning_rate;
      StepMetrics m;
      if (options.phase == Phase::kNll) {
        m = nll_update(batch, params, opt, lr, cfg.clip_norm);
      } else {
        const std::uint64_t step_seed = cfg.seed * 0x9e3779b97f4a7c15ull + step;
        m = joint_update(batch, params, opt, lr, options.weights, options.nlg_reward,
                         options.fact_reward, train.vocab, cfg.sample_temperature,
                         cfg.clip_norm, step_seed);
      }
      if (m.aborted) {
        std::cerr << "[trainer] step " << step << " aborted on non-finite loss\n";
      }
      nll_sum += m.nll;
      reward_nlg_sum += m.mean_reward_nlg;
      reward_fact_sum += m.mean_reward_fact;
      ++steps_this_epoch;
    }

    EpochRecord train_rec;
    train_rec.epoch = epoch;
    train_rec.split = "train";
    if (steps_this_epoch > 0) {
      train_rec.nll = nll_sum / static_cast<double>(steps_this_epoch);
      train_rec.mean_reward_nlg = reward_nlg_sum / static_cast<double>(steps_this_epoch);
      train_rec.mean_reward_fact = reward_fact_sum / static_cast<double>(steps_this_epoch);
    }
    report.records.push_back(train_rec);

    ValSummary vs = validate_epoch(val, params, options);
    EpochRecord val_rec;
    val_rec.epoch = epoch;
    val_rec.split = "val";
    val_rec.nll = vs.nll;
    val_rec.clinical_f1 = vs.clinical_f1;
    val_rec.mean_reward_nlg = vs.mean_reward_nlg;
    val_rec.mean_reward_fact = vs.mean_reward_fact;
    report.records.push_back(val_rec);

    // NLL phase keeps the lowest val NLL; JOINT the highest clinical F1
    // (falling back to NLL when no lexicon is wired in)
    double metric;
    bool better;
    if (options.phase == Phase::kNll) {
      metric = vs.nll;
      better = metric < report.best_metric;
    } else if (options.lexicon) {
      metric = vs.clinical_f1;
      better = metric > report.best_metric;
    } else {
      metric = -vs.nll;
      better = metric > report.best_metric;
    }
    if (better) {
      report.best_metric = metric;
      report.best_epoch = epoch;
      report.best = params;
      if (!options.checkpoint_path.empty()) {
        checkpoint::save_params(report.best, options.checkpoint_path);
      }
    }
  }
  return report;
}

}  // namespace factharness::trainer
