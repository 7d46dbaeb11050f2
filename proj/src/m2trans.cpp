#include "factharness/m2trans.hpp"

#include <algorithm>
#include <cmath>

#include "factharness/error.hpp"
#include "factharness/rng.hpp"

namespace factharness::m2trans {

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("model width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
  if (vocab < 3) throw ConfigError("vocab must include pad/bos/eos");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  if (images == 0) throw ConfigError("images per study must be >= 1");
  if (grid_positions == 0 || grid_depth == 0) throw ConfigError("grid shape must be non-zero");
  if (ff == 0) throw ConfigError("feed-forward width must be >= 1");
}

namespace {

std::string enc_name(std::size_t layer, const std::string& leaf) {
  return "enc" + std::to_string(layer) + "." + leaf;
}
std::string dec_name(std::size_t layer, const std::string& leaf) {
  return "dec" + std::to_string(layer) + "." + leaf;
}
std::string cross_name(std::size_t dlayer, std::size_t elayer, const std::string& leaf) {
  return "dec" + std::to_string(dlayer) + ".cross" + std::to_string(elayer) + "." + leaf;
}
std::string gate_name(std::size_t dlayer, std::size_t elayer, const std::string& leaf) {
  return "dec" + std::to_string(dlayer) + ".gate" + std::to_string(elayer) + "." + leaf;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  const std::size_t d = config.d, ff = config.ff;

  auto declare = [&](const std::string& name, std::vector<std::size_t> shape) {
    p.tensors[name] = Tensor::zeros(std::move(shape));
  };

  declare("patch_proj.w", {config.grid_depth, d});
  declare("patch_proj.b", {d});
  declare("pos_img", {config.grid_positions, d});
  declare("pos_tok", {config.max_len, d});
  declare("tok_emb", {config.vocab, d});
  declare("out_proj.w", {d, config.vocab});
  declare("out_proj.b", {config.vocab});

  for (std::size_t i = 0; i < config.n_layers; ++i) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) declare(enc_name(i, w), {d, d});
    declare(enc_name(i, "mk"), {config.n_mem, d});
    declare(enc_name(i, "mv"), {config.n_mem, d});
    declare(enc_name(i, "ff1.w"), {d, ff});
    declare(enc_name(i, "ff1.b"), {ff});
    declare(enc_name(i, "ff2.w"), {ff, d});
    declare(enc_name(i, "ff2.b"), {d});
    for (const char* ln : {"ln1", "ln2"}) {
      declare(enc_name(i, std::string(ln) + ".g"), {d});
      declare(enc_name(i, std::string(ln) + ".b"), {d});
    }

    for (const char* w : {"wq", "wk", "wv", "wo"}) declare(dec_name(i, std::string("self.") + w), {d, d});
    for (std::size_t n = 0; n < config.n_layers; ++n) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) declare(cross_name(i, n, w), {d, d});
      declare(gate_name(i, n, "w"), {2 * d, d});
      declare(gate_name(i, n, "b"), {d});
    }
    declare(dec_name(i, "ff1.w"), {d, ff});
    declare(dec_name(i, "ff1.b"), {ff});
    declare(dec_name(i, "ff2.w"), {ff, d});
    declare(dec_name(i, "ff2.b"), {d});
    for (const char* ln : {"ln1", "ln2", "ln3"}) {
      declare(dec_name(i, std::string(ln) + ".g"), {d});
      declare(dec_name(i, std::string(ln) + ".b"), {d});
    }
  }

  // deterministic: map iteration is name-ordered, single rng stream
  Rng rng(seed);
  for (auto& [name, tensor] : p.tensors) {
    const bool ln = name.find(".ln") != std::string::npos;
    const bool emb = name == "tok_emb" || name == "pos_img" || name == "pos_tok";
    if (ln) {
      if (name.ends_with(".g")) {
        for (double& x : tensor.data) x = 1.0;
      }
      // layer-norm bias stays zero
    } else if (name.ends_with(".b")) {
      // additive biases start at zero
    } else if (emb) {
      for (double& x : tensor.data) x = 0.02 * rng.normal();
    } else if (name.ends_with(".mk") || name.ends_with(".mv")) {
      const double s = 1.0 / std::sqrt(static_cast<double>(d));
      for (double& x : tensor.data) x = s * rng.normal();
    } else {
      const double fan_in = static_cast<double>(tensor.rows());
      const double fan_out = static_cast<double>(tensor.cols());
      const double s = std::sqrt(2.0 / (fan_in + fan_out));
      for (double& x : tensor.data) x = s * rng.normal();
    }
  }
  return p;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params) : config_(params.config) {
  for (const auto& [name, tensor] : params.tensors) {
    values_.emplace(name, tape.input(tensor));
  }
}

Value BoundParams::operator[](const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

namespace {

// multi-head attention over pre-projected q/k/v (full width d); mask, when
// present, is added to every head's scores before softmax
Value mha(Tape& tape, Value q, Value k, Value v, Value wo, std::size_t heads,
          const Tensor* mask, ForwardTrace* trace) {
  const std::size_t d = tape.value(q).cols();
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Value mask_value{};
  if (mask) mask_value = tape.input(*mask);

  std::vector<Value> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Value qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    Value kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    Value vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    Value scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt);
    if (mask) scores = tape.add(scores, mask_value);
    Value att = tape.softmax(scores, 1);
    if (trace) trace->attentions.push_back(tape.value(att));
    head_outputs.push_back(tape.matmul(att, vh));
  }
  Value merged = heads == 1 ? head_outputs[0] : tape.concat(head_outputs, 1);
  return tape.matmul(merged, wo);
}

Value ff_block(Tape& tape, const BoundParams& bound, Value x, const std::string& prefix) {
  Value h = tape.relu(tape.add(tape.matmul(x, bound[prefix + "ff1.w"]), bound[prefix + "ff1.b"]));
  return tape.add(tape.matmul(h, bound[prefix + "ff2.w"]), bound[prefix + "ff2.b"]);
}

Value ln_block(Tape& tape, const BoundParams& bound, Value x, const std::string& name) {
  return tape.layer_norm(x, bound[name + ".g"], bound[name + ".b"]);
}

Tensor grid_to_tensor(const corpus::Grid& grid) {
  return Tensor({grid.positions(), grid.depth}, grid.data);
}

Tensor causal_mask(std::size_t t) {
  Tensor mask = Tensor::zeros({t, t});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) mask.at(i, j) = -1e30;
  return mask;
}

std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

}  // namespace

EncodedStack encode_images_on_tape(Tape& tape, const BoundParams& bound,
                                   const std::vector<corpus::Grid>& images,
                                   ForwardTrace* trace) {
  const ModelConfig& cfg = bound.config();
  if (images.size() != cfg.images) {
    throw ShapeError("expected " + std::to_string(cfg.images) + " images, got " +
                     std::to_string(images.size()));
  }
  for (const auto& g : images) {
    if (g.positions() != cfg.grid_positions || g.depth != cfg.grid_depth) {
      throw ShapeError("grid " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                       "x" + std::to_string(g.depth) + " does not match config positions " +
                       std::to_string(cfg.grid_positions) + " depth " +
                       std::to_string(cfg.grid_depth));
    }
  }

  EncodedStack stack;
  stack.layers.assign(cfg.n_layers, {});
  Value img_pos = tape.embedding_lookup(bound["pos_img"], iota_ids(cfg.grid_positions));

  for (const auto& grid : images) {
    Value x = tape.add(tape.matmul(tape.input(grid_to_tensor(grid)), bound["patch_proj.w"]),
                       bound["patch_proj.b"]);
    x = tape.add(x, img_pos);
    for (std::size_t n = 0; n < cfg.n_layers; ++n) {
      const std::string en = "enc" + std::to_string(n) + ".";
      Value q = tape.matmul(x, bound[en + "wq"]);
      Value k = tape.concat({tape.matmul(x, bound[en + "wk"]), bound[en + "mk"]}, 0);
      Value v = tape.concat({tape.matmul(x, bound[en + "wv"]), bound[en + "mv"]}, 0);
      Value att = mha(tape, q, k, v, bound[en + "wo"], cfg.heads, nullptr, trace);
      Value z = ln_block(tape, bound, tape.add(x, att), en + "ln1");
      Value f = ff_block(tape, bound, z, en);
      x = ln_block(tape, bound, tape.add(z, f), en + "ln2");
      stack.layers[n].push_back(x);
    }
  }
  return stack;
}

std::vector<std::vector<Tensor>> encode_images(const std::vector<corpus::Grid>& images,
                                               const ModelParams& params,
                                               ForwardTrace* trace) {
  Tape tape;
  BoundParams bound(tape, params);
  EncodedStack stack = encode_images_on_tape(tape, bound, images, trace);
  std::vector<std::vector<Tensor>> out;
  for (const auto& layer : stack.layers) {
    std::vector<Tensor> imgs;
    for (Value v : layer) imgs.push_back(tape.value(v));
    out.push_back(std::move(imgs));
  }
  return out;
}

Value decode_logits_on_tape(Tape& tape, const BoundParams& bound, const EncodedStack& stack,
                            const std::vector<std::size_t>& prefix, ForwardTrace* trace) {
  const ModelConfig& cfg = bound.config();
  if (prefix.empty()) throw ValidationError("decode needs a non-empty prefix");
  if (prefix.size() > cfg.max_len) {
    throw ValidationError("prefix length " + std::to_string(prefix.size()) +
                          " exceeds max_len " + std::to_string(cfg.max_len));
  }
  for (std::size_t id : prefix) {
    if (id >= cfg.vocab) {
      throw ValidationError("token id " + std::to_string(id) + " out of vocab " +
                            std::to_string(cfg.vocab));
    }
  }

  const std::size_t t = prefix.size();
  Value y = tape.add(tape.embedding_lookup(bound["tok_emb"], prefix),
                     tape.embedding_lookup(bound["pos_tok"], iota_ids(t)));
  const Tensor mask = causal_mask(t);

  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string dn = "dec" + std::to_string(i) + ".";
    Value q = tape.matmul(y, bound[dn + "self.wq"]);
    Value k = tape.matmul(y, bound[dn + "self.wk"]);
    Value v = tape.matmul(y, bound[dn + "self.wv"]);
    Value self_att = mha(tape, q, k, v, bound[dn + "self.wo"], cfg.heads, &mask, trace);
    Value ydd = ln_block(tape, bound, tape.add(y, self_att), dn + "ln1");  // Ÿ

    // meshed cross-attention: per encoder layer, attend per image, max-pool
    // over images, gate with α_n = σ(W_n [Y; C_n] + b_n), sum over layers
    Value mesh{};
    bool first = true;
    for (std::size_t n = 0; n < cfg.n_layers; ++n) {
      const std::string cn = cross_name(i, n, "");
      std::vector<Value> per_image;
      per_image.reserve(stack.layers[n].size());
      Value cq = tape.matmul(ydd, bound[cn + "wq"]);
      for (Value enc : stack.layers[n]) {
        Value ck = tape.matmul(enc, bound[cn + "wk"]);
        Value cv = tape.matmul(enc, bound[cn + "wv"]);
        per_image.push_back(mha(tape, cq, ck, cv, bound[cn + "wo"], cfg.heads, nullptr, trace));
      }
      Value pooled = per_image.size() == 1 ? per_image[0] : tape.max_over_set(per_image);
      Value gate_in = tape.concat({y, pooled}, 1);
      Value alpha = tape.sigmoid(tape.add(tape.matmul(gate_in, bound[gate_name(i, n, "w")]),
                                          bound[gate_name(i, n, "b")]));
      if (trace) trace->gates.push_back(tape.value(alpha));
      Value gated = tape.elementwise_mul(alpha, pooled);
      mesh = first ? gated : tape.add(mesh, gated);
      first = false;
    }

    Value z = ln_block(tape, bound, tape.add(ydd, mesh), dn + "ln2");
    Value f = ff_block(tape, bound, z, dn);
    y = ln_block(tape, bound, tape.add(z, f), dn + "ln3");
  }

  return tape.add(tape.matmul(y, bound["out_proj.w"]), bound["out_proj.b"]);
}

Tensor decode_logits(const std::vector<std::size_t>& prefix,
                     const std::vector<corpus::Grid>& images, const ModelParams& params,
                     ForwardTrace* trace) {
  Tape tape;
  BoundParams bound(tape, params);
  EncodedStack stack = encode_images_on_tape(tape, bound, images, trace);
  return tape.value(decode_logits_on_tape(tape, bound, stack, prefix, trace));
}

Value sequence_ce_sum(Tape& tape, const BoundParams& bound, const EncodedStack& stack,
                      const std::vector<std::size_t>& ids, std::size_t* token_count) {
  if (ids.size() < 2) throw ValidationError("teacher forcing needs >= 2 token ids");
  std::vector<std::size_t> inputs(ids.begin(), ids.end() - 1);
  std::vector<std::size_t> targets(ids.begin() + 1, ids.end());
  std::vector<double> mask(targets.size(), 1.0);
  std::size_t active = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == corpus::kPadId) {
      mask[i] = 0.0;
    } else {
      ++active;
    }
  }
  if (token_count) *token_count = active;
  Value logits = decode_logits_on_tape(tape, bound, stack, inputs);
  return tape.cross_entropy_with_logits(logits, targets, mask, diffmath::Reduction::kSum);
}

Value nll_loss_on_tape(Tape& tape, const BoundParams& bound,
                       const std::vector<TrainExample>& batch) {
  if (batch.empty()) throw ValidationError("nll_loss: empty batch");
  Value total{};
  bool first = true;
  std::size_t tokens = 0;
  for (const auto& ex : batch) {
    EncodedStack stack = encode_images_on_tape(tape, bound, ex.images);
    std::size_t count = 0;
    Value ce = sequence_ce_sum(tape, bound, stack, ex.ref_ids, &count);
    tokens += count;
    total = first ? ce : tape.add(total, ce);
    first = false;
  }
  if (tokens == 0) throw ValidationError("nll_loss: no unmasked tokens in batch");
  return tape.scale(total, 1.0 / static_cast<double>(tokens));
}

double nll_loss(const std::vector<TrainExample>& batch, const ModelParams& params) {
  Tape tape;
  BoundParams bound(tape, params);
  return tape.value(nll_loss_on_tape(tape, bound, batch)).data[0];
}

namespace {

// stable log-softmax of one logits row
std::vector<double> log_softmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t n = logits.cols();
  double mx = logits.at(row, 0);
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, logits.at(row, j));
  double lse = 0.0;
  for (std::size_t j = 0; j < n; ++j) lse += std::exp(logits.at(row, j) - mx);
  lse = std::log(lse);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = logits.at(row, j) - mx - lse;
  return out;
}

struct Beam {
  std::vector<std::size_t> ids;
  double log_prob = 0.0;
};

}  // namespace

DecodeResult decode(const std::vector<corpus::Grid>& images, const ModelParams& params,
                    const DecodeOptions& options) {
  const ModelConfig& cfg = params.config;
  Tape tape;
  BoundParams bound(tape, params);
  EncodedStack stack = encode_images_on_tape(tape, bound, images);

  auto last_row_lsm = [&](const std::vector<std::size_t>& prefix) {
    Value logits = decode_logits_on_tape(tape, bound, stack, prefix);
    return log_softmax_row(tape.value(logits), prefix.size() - 1);
  };

  if (options.mode == DecodeMode::kGreedy || options.mode == DecodeMode::kSample) {
    Rng rng(options.seed);
    DecodeResult result;
    result.ids = {corpus::kBosId};
    while (result.ids.size() < cfg.max_len) {
      std::vector<double> lsm = last_row_lsm(result.ids);
      std::size_t pick = 0;
      if (options.mode == DecodeMode::kGreedy) {
        for (std::size_t j = 1; j < lsm.size(); ++j) {
          if (lsm[j] > lsm[pick]) pick = j;  // ties keep the lowest id
        }
      } else {
        // temperature applies to the sampling distribution only; the
        // recorded log-prob stays the model's
        double inv_t = 1.0 / options.temperature;
        double mx = lsm[0] * inv_t;
        for (std::size_t j = 1; j < lsm.size(); ++j) mx = std::max(mx, lsm[j] * inv_t);
        std::vector<double> probs(lsm.size());
        double total = 0.0;
        for (std::size_t j = 0; j < lsm.size(); ++j) {
          probs[j] = std::exp(lsm[j] * inv_t - mx);
          total += probs[j];
        }
        double u = rng.uniform() * total;
        double cum = 0.0;
        pick = probs.size() - 1;  // guards against accumulated rounding
        for (std::size_t j = 0; j < probs.size(); ++j) {
          cum += probs[j];
          if (u < cum) {
            pick = j;
            break;
          }
        }
      }
      result.log_prob += lsm[pick];
      result.ids.push_back(pick);
      if (pick == corpus::kEosId) break;
    }
    return result;
  }

  // beam search, summed log-prob, no length normalization
  if (options.beam_width == 0) throw ConfigError("beam width must be >= 1");
  std::vector<Beam> live = {Beam{{corpus::kBosId}, 0.0}};
  std::vector<Beam> completed;
  while (!live.empty() && completed.size() < options.beam_width) {
    // candidates inherit (beam order, token asc); stable sort keeps that
    // order among equal scores, so width 1 reproduces greedy tie-breaks
    std::vector<Beam> candidates;
    for (const Beam& beam : live) {
      std::vector<double> lsm = last_row_lsm(beam.ids);
      for (std::size_t j = 0; j < lsm.size(); ++j) {
        Beam next = beam;
        next.ids.push_back(j);
        next.log_prob += lsm[j];
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) { return a.log_prob > b.log_prob; });

    std::vector<Beam> next_live;
    for (const Beam& cand : candidates) {
      if (completed.size() + next_live.size() >= options.beam_width) break;
      if (cand.ids.back() == corpus::kEosId || cand.ids.size() >= cfg.max_len) {
        completed.push_back(cand);
      } else {
        next_live.push_back(cand);
      }
    }
    live = std::move(next_live);
  }
  const std::vector<Beam>& pool = completed.empty() ? live : completed;
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i) {
    if (pool[i].log_prob > pool[best].log_prob) best = i;
  }
  return DecodeResult{pool[best].ids, pool[best].log_prob};
}

}  // namespace factharness::m2trans
