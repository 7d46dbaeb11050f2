#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "factharness/corpus.hpp"
#include "factharness/diffmath.hpp"

namespace factharness::m2trans {

using diffmath::Tape;
using diffmath::Tensor;
using diffmath::Value;

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t n_layers = 2;  // encoder and decoder stack depth N
  std::size_t n_mem = 8;     // memory slots per encoder layer
  std::size_t vocab = 0;
  std::size_t max_len = 64;  // max sequence length incl. BOS/EOS
  std::size_t images = 2;    // K
  std::size_t grid_positions = 16;  // R*C after flattening
  std::size_t grid_depth = 16;      // input feature dimension
  std::size_t ff = 128;             // feed-forward inner width

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Named parameter tensors; names are stable and drive both the optimizer
// state and the checkpoint format.
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
};

// Parameters bound onto one tape as leaf values, so gradients can be read
// back by name after backward.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params);
  Value operator[](const std::string& name) const;
  const ModelConfig& config() const { return config_; }
  const std::map<std::string, Value>& values() const { return values_; }

 private:
  ModelConfig config_;
  std::map<std::string, Value> values_;
};

// Debug/teaching hook: attention rows and gate activations of one forward.
struct ForwardTrace {
  std::vector<Tensor> attentions;  // post-softmax weights, one per attention call
  std::vector<Tensor> gates;       // α_n activations, one per (decoder layer, encoder layer)
};

// layers[n][k]: encoder layer n output for image k, [positions, d]
struct EncodedStack {
  std::vector<std::vector<Value>> layers;
};

EncodedStack encode_images_on_tape(Tape& tape, const BoundParams& bound,
                                   const std::vector<corpus::Grid>& images,
                                   ForwardTrace* trace = nullptr);
// convenience: raw tensors of all N layer outputs for all K images
std::vector<std::vector<Tensor>> encode_images(const std::vector<corpus::Grid>& images,
                                               const ModelParams& params,
                                               ForwardTrace* trace = nullptr);

// next-token logits for every prefix position, [len(prefix), vocab]
Value decode_logits_on_tape(Tape& tape, const BoundParams& bound, const EncodedStack& stack,
                            const std::vector<std::size_t>& prefix,
                            ForwardTrace* trace = nullptr);
Tensor decode_logits(const std::vector<std::size_t>& prefix,
                     const std::vector<corpus::Grid>& images, const ModelParams& params,
                     ForwardTrace* trace = nullptr);

struct TrainExample {
  std::vector<corpus::Grid> images;
  std::vector<std::size_t> ref_ids;  // BOS ... EOS, possibly right-padded with PAD
};

// summed cross-entropy of one teacher-forced sequence against an already
// encoded study; PAD targets masked, unmasked count reported via token_count
Value sequence_ce_sum(Tape& tape, const BoundParams& bound, const EncodedStack& stack,
                      const std::vector<std::size_t>& ids, std::size_t* token_count = nullptr);

// mean token-level cross-entropy under teacher forcing; PAD targets masked
Value nll_loss_on_tape(Tape& tape, const BoundParams& bound,
                       const std::vector<TrainExample>& batch);
double nll_loss(const std::vector<TrainExample>& batch, const ModelParams& params);

enum class DecodeMode { kGreedy, kSample, kBeam };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  std::uint64_t seed = 0;      // SAMPLE
  double temperature = 1.0;    // SAMPLE
  std::size_t beam_width = 4;  // BEAM
};

struct DecodeResult {
  std::vector<std::size_t> ids;  // BOS ... [EOS]; EOS absent if cut at max_len
  double log_prob = 0.0;         // sum of chosen-token log-probabilities
};

DecodeResult decode(const std::vector<corpus::Grid>& images, const ModelParams& params,
                    const DecodeOptions& options = {});

}  // namespace factharness::m2trans
