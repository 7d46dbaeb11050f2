#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "factharness/corpus.hpp"
#include "factharness/m2trans.hpp"
#include "factharness/textproc.hpp"

namespace factharness::trainer {

using diffmath::Tensor;

// λ1·NLL + λ2·RL(NLG reward) + λ3·RL(factual reward)
struct LossWeights {
  double nll = 1.0;
  double rl_nlg = 0.0;
  double rl_fact = 0.0;

  void validate() const;  // all >= 0, sum to 1 within 1e-9
  static LossWeights nll_only() { return {1.0, 0.0, 0.0}; }
  static LossWeights nll_bs() { return {0.01, 0.99, 0.0}; }
  static LossWeights nll_bs_fact() { return {0.01, 0.495, 0.495}; }
};

// (generated text, reference text) -> reward in [0,1]
using RewardFn = std::function<double(const std::string&, const std::string&)>;

enum class Schedule {
  kAuto,    // warmup for the NLL phase, fixed rate for JOINT
  kWarmup,  // inverse-sqrt with warmup regardless of phase
  kFixed,   // rl_learning_rate regardless of phase
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::size_t warmup_steps = 500;
  double lr_scale = 1.0;           // multiplies the warmup schedule
  double rl_learning_rate = 1e-4;  // fixed rate for the RL phase
  Schedule schedule = Schedule::kAuto;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  double sample_temperature = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// lr = scale · d^(-1/2) · min(step^(-1/2), step · warmup^(-3/2)), step >= 1
double warmup_lr(std::size_t step, std::size_t warmup_steps, std::size_t d, double scale);

double global_norm(const std::map<std::string, Tensor>& grads);
void clip_gradients(std::map<std::string, Tensor>& grads, double clip_norm);

class Adam {
 public:
  Adam(const m2trans::ModelParams& params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(m2trans::ModelParams& params, const std::map<std::string, Tensor>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  std::map<std::string, Tensor> m_, v_;
  std::size_t t_ = 0;
  double beta1_, beta2_, eps_;
};

// one self-critical draw: sample + greedy baseline, both scored vs reference
struct ScstSample {
  m2trans::DecodeResult sampled;
  m2trans::DecodeResult greedy;
  std::string sampled_text;
  std::string greedy_text;
  double reward_sampled = 0.0;
  double reward_greedy = 0.0;
  double advantage = 0.0;  // r(sampled) − r(greedy)
};

ScstSample scst_gradient_weight(const std::vector<corpus::Grid>& images,
                                const m2trans::ModelParams& params, const RewardFn& reward_fn,
                                const std::string& reference_text,
                                const std::vector<std::string>& vocab, std::uint64_t seed,
                                double temperature = 1.0);

struct StepMetrics {
  double loss = 0.0;
  double nll = 0.0;
  double rl_nlg = 0.0;
  double rl_fact = 0.0;
  double mean_reward_nlg = 0.0;  // mean sampled reward over scored studies
  double mean_reward_fact = 0.0;
  double grad_norm = 0.0;  // pre-clip
  std::size_t skipped = 0;  // studies whose reward computation failed
  bool aborted = false;     // non-finite loss; params left untouched
};

struct Batch {
  std::vector<m2trans::TrainExample> examples;
  std::vector<std::string> references;  // reference text, aligned with examples
};

Batch batch_from_studies(const corpus::StudySet& set, const std::vector<std::size_t>& indices,
                         const m2trans::ModelConfig& config);

StepMetrics nll_update(const Batch& batch, m2trans::ModelParams& params, Adam& opt, double lr,
                       double clip_norm);

// single optimizer step on the λ-weighted joint loss; RL terms use one
// sampled sequence per study with the greedy decode as baseline
StepMetrics joint_update(const Batch& batch, m2trans::ModelParams& params, Adam& opt, double lr,
                         const LossWeights& weights, const RewardFn& nlg_reward,
                         const RewardFn& fact_reward, const std::vector<std::string>& vocab,
                         double temperature, double clip_norm, std::uint64_t step_seed);

enum class Phase { kNll, kJoint };

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double nll = 0.0;
  double mean_reward_nlg = 0.0;
  double mean_reward_fact = 0.0;
  double clinical_f1 = 0.0;
};

std::string to_json_line(const EpochRecord& record);
void write_report_jsonl(const std::vector<EpochRecord>& records, const std::string& path);

struct RunOptions {
  Phase phase = Phase::kNll;
  TrainConfig config;
  LossWeights weights;  // JOINT only; NLL phase behaves as (1,0,0)
  RewardFn nlg_reward;  // required when weights.rl_nlg > 0
  RewardFn fact_reward;  // required when weights.rl_fact > 0
  const textproc::Lexicon* lexicon = nullptr;  // enables clinical F1 in JOINT validation
  std::string checkpoint_path;  // best-validation params saved here when non-empty
  std::size_t val_decode_limit = 0;  // cap on beam-decoded val studies; 0 = all
};

struct TrainingReport {
  std::vector<EpochRecord> records;
  m2trans::ModelParams best;
  double best_metric = 0.0;  // val NLL (NLL phase, lower wins) or val clinical F1 (JOINT, higher)
  std::size_t best_epoch = 0;
};

double validation_nll(const corpus::StudySet& set, const m2trans::ModelParams& params);

// teacher-forced next-token accuracy over non-pad targets
double next_token_accuracy(const corpus::StudySet& set, const m2trans::ModelParams& params);

TrainingReport run_training(const corpus::StudySet& train, const corpus::StudySet& val,
                            m2trans::ModelParams params, const RunOptions& options);

}  // namespace factharness::trainer
