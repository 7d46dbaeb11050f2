#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace factharness::diffmath {

// Dense row-major tensor of 64-bit reals. Rank 1 or 2 covers the model.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::size_t> shape);

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;
};

// Handle into a tape; cheap to copy.
struct Value {
  std::size_t id = 0;
};

enum class Reduction { kMean, kSum };

// Reverse-mode tape. Nodes are appended in execution order; backward walks
// them in reverse, accumulating gradients additively at fan-out. One tape
// per forward pass; single-threaded.
class Tape {
 public:
  Tape() = default;
  // backward closures capture this; the tape must stay put
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value input(Tensor t);

  const Tensor& value(Value v) const;
  const Tensor& grad(Value v) const;
  std::size_t size() const { return nodes_.size(); }

  Value matmul(Value a, Value b);
  Value transpose(Value a);
  // same shapes, or b a vector broadcast across a's rows (bias add)
  Value add(Value a, Value b);
  Value concat(const std::vector<Value>& xs, std::size_t axis);
  Value softmax(Value a, std::size_t axis);
  Value scale(Value a, double factor);
  Value sigmoid(Value a);
  Value relu(Value a);
  // normalizes each row of a; gain/bias are vectors of a's column count
  Value layer_norm(Value a, Value gain, Value bias);
  Value embedding_lookup(Value table, const std::vector<std::size_t>& ids);
  // elementwise max across equally-shaped tensors; gradient goes to the
  // argmax input, ties resolved to the lowest index
  Value max_over_set(const std::vector<Value>& xs);
  Value elementwise_mul(Value a, Value b);
  // per-row CE of logits[t] against targets[t]; mask[t] == 0 drops a row;
  // kMean divides by the number of unmasked rows
  Value cross_entropy_with_logits(Value logits, const std::vector<std::size_t>& targets,
                                  const std::vector<double>& mask, Reduction reduction);
  Value sum(Value a);
  // columns [c0, c1) of a rank-2 tensor; how multi-head attention splits
  Value slice_cols(Value a, std::size_t c0, std::size_t c1);

  // extension/test hook: result takes `out` as its forward value; backward
  // receives (grad of out, value of parent) and accumulates into the
  // parent's grad. Used by the gradient-checker negative control.
  Value custom_unary(Value parent, Tensor out,
                     std::function<void(const Tensor& out_grad, const Tensor& in_value,
                                        Tensor& in_grad)>
                         backward);

  // seeds d(loss)/d(loss) = 1 and propagates; loss must be a single element
  void backward(Value loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> backward_fn;  // empty for leaves
  };

  Value push(Tensor value, std::function<void()> backward_fn);
  Tensor& grad_mut(Value v) { return nodes_[v.id].grad; }

  std::vector<Node> nodes_;
};

// Max relative error between analytic gradients and central finite
// differences (step 1e-5) over every element of every input; denominator
// max(|a|, |b|, 1e-8). fn must build a scalar from the given inputs.
double grad_check(const std::function<Value(Tape&, const std::vector<Value>&)>& fn,
                  const std::vector<std::vector<std::size_t>>& input_shapes,
                  std::uint64_t seed);

}  // namespace factharness::diffmath
