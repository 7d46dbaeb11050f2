#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "factharness/diffmath.hpp"
#include "factharness/error.hpp"
#include "factharness/rng.hpp"

using namespace factharness;
using diffmath::Reduction;
using diffmath::Tape;
using diffmath::Tensor;
using diffmath::Value;

namespace {

constexpr double kTol = 1e-4;

using BuildFn = std::function<Value(Tape&, const std::vector<Value>&)>;

// run the checker over 10 seeds and report the worst error
double worst_error(const BuildFn& fn, const std::vector<std::vector<std::size_t>>& shapes) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    worst = std::max(worst, diffmath::grad_check(fn, shapes, seed));
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor plumbing") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0);
  CHECK(t.shape_str() == "[2,3]");
  CHECK(Tensor::zeros({4}).numel() == 4);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeError);
}

TEST_CASE("matmul forward and shape checks") {
  Tape tape;
  auto a = tape.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto b = tape.input(Tensor({3, 2}, {1, 0, 0, 1, 1, 1}));
  auto c = tape.matmul(a, b);
  CHECK(tape.value(c).shape == std::vector<std::size_t>{2, 2});
  CHECK(tape.value(c).at(0, 0) == 4.0);
  CHECK(tape.value(c).at(1, 1) == 11.0);
  auto bad = tape.input(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(tape.matmul(a, bad), ShapeError);
}

TEST_CASE("backward accumulates across fan-out") {
  Tape tape;
  auto x = tape.input(Tensor({1, 2}, {3.0, -1.0}));
  auto doubled = tape.add(x, x);  // d(sum)/dx = 2 everywhere
  auto loss = tape.sum(doubled);
  tape.backward(loss);
  CHECK(tape.grad(x).data == std::vector<double>{2.0, 2.0});
  CHECK_THROWS_AS(tape.backward(x), ShapeError);  // loss must be scalar
}

TEST_CASE("finite differences: binary and unary op catalog") {
  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.matmul(in[0], in[1]));
        },
        {{3, 4}, {4, 2}}) <= kTol);

  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.add(in[0], in[1]));
        },
        {{3, 4}, {3, 4}}) <= kTol);

  // bias-style broadcast add: b is a vector over columns
  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.add(in[0], in[1]));
        },
        {{3, 4}, {4}}) <= kTol);

  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.transpose(in[0]));
        },
        {{3, 5}}) <= kTol);

  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.scale(in[0], -1.7));
        },
        {{2, 3}}) <= kTol);

  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.sigmoid(in[0]));
        },
        {{3, 3}}) <= kTol);

  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.elementwise_mul(in[0], in[1]));
        },
        {{3, 4}, {3, 4}}) <= kTol);

  // relu has a kink at 0; shift inputs away from it to keep the finite
  // difference meaningful
  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          auto shifted = t.add(in[0], in[1]);
          return t.sum(t.relu(shifted));
        },
        {{3, 4}, {3, 4}}) <= 2e-4);
}

TEST_CASE("finite differences: softmax both axes") {
  for (std::size_t axis : {std::size_t{0}, std::size_t{1}}) {
    CHECK(worst_error([axis](Tape& t, const std::vector<Value>& in) {
            // weight the probabilities so the gradient is not identically 0
            return t.sum(t.elementwise_mul(t.softmax(in[0], axis), in[1]));
          },
          {{3, 4}, {3, 4}}) <= kTol);
  }
}

TEST_CASE("finite differences: concat along both axes") {
  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.elementwise_mul(t.concat({in[0], in[1]}, 0), in[2]));
        },
        {{2, 3}, {4, 3}, {6, 3}}) <= kTol);
  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.elementwise_mul(t.concat({in[0], in[1]}, 1), in[2]));
        },
        {{2, 3}, {2, 5}, {2, 8}}) <= kTol);
}

TEST_CASE("finite differences: layer_norm with gain and bias") {
  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.elementwise_mul(t.layer_norm(in[0], in[1], in[2]), in[3]));
        },
        {{3, 6}, {6}, {6}, {3, 6}}) <= kTol);
}

TEST_CASE("finite differences: embedding_lookup routes grads to picked rows") {
  std::vector<std::size_t> ids = {2, 0, 2, 1};  // repeated id: grads accumulate
  CHECK(worst_error([&ids](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.elementwise_mul(t.embedding_lookup(in[0], ids), in[1]));
        },
        {{3, 4}, {4, 4}}) <= kTol);

  Tape tape;
  auto table = tape.input(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  auto picked = tape.embedding_lookup(table, {2, 2});
  auto loss = tape.sum(picked);
  tape.backward(loss);
  CHECK(tape.grad(table).data == std::vector<double>{0, 0, 0, 0, 2, 2});
  CHECK_THROWS_AS(tape.embedding_lookup(table, {3}), ShapeError);
}

TEST_CASE("finite differences: slice_cols and max_over_set") {
  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.elementwise_mul(t.slice_cols(in[0], 1, 4), in[1]));
        },
        {{3, 6}, {3, 3}}) <= kTol);

  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          return t.sum(t.elementwise_mul(t.max_over_set({in[0], in[1], in[2]}), in[3]));
        },
        {{2, 3}, {2, 3}, {2, 3}, {2, 3}}) <= 2e-4);

  // tie goes to the lowest-index input
  Tape tape;
  auto a = tape.input(Tensor({1, 2}, {5.0, 1.0}));
  auto b = tape.input(Tensor({1, 2}, {5.0, 2.0}));
  auto m = tape.max_over_set({a, b});
  tape.backward(tape.sum(m));
  CHECK(tape.grad(a).data == std::vector<double>{1.0, 0.0});
  CHECK(tape.grad(b).data == std::vector<double>{0.0, 1.0});
}

TEST_CASE("finite differences: cross entropy, both reductions, masking") {
  std::vector<std::size_t> targets = {1, 0, 2};
  for (auto reduction : {Reduction::kMean, Reduction::kSum}) {
    std::vector<double> mask = {1, 0, 1};
    CHECK(worst_error([&, reduction](Tape& t, const std::vector<Value>& in) {
            return t.cross_entropy_with_logits(in[0], targets, mask, reduction);
          },
          {{3, 4}}) <= kTol);
  }

  // fully masked row contributes nothing
  Tape tape;
  auto logits = tape.input(Tensor({2, 3}, {10, 0, 0, 0, 10, 0}));
  auto loss = tape.cross_entropy_with_logits(logits, {0, 1}, {1, 0}, Reduction::kSum);
  tape.backward(loss);
  for (std::size_t c = 0; c < 3; ++c) CHECK(tape.grad(logits).at(1, c) == 0.0);
  CHECK_THROWS_AS(
      tape.cross_entropy_with_logits(logits, {0}, {1, 1}, Reduction::kSum),
      ShapeError);
  CHECK_THROWS_AS(
      tape.cross_entropy_with_logits(logits, {0, 1}, {0, 0}, Reduction::kMean),
      ValidationError);  // mean over zero unmasked rows
}

TEST_CASE("a composite expression close to one attention head checks out") {
  CHECK(worst_error([](Tape& t, const std::vector<Value>& in) {
          auto q = t.matmul(in[0], in[1]);
          auto k = t.matmul(in[0], in[2]);
          auto v = t.matmul(in[0], in[3]);
          auto att = t.softmax(t.scale(t.matmul(q, t.transpose(k)), 0.5), 1);
          auto out = t.matmul(att, v);
          return t.sum(t.elementwise_mul(out, in[4]));
        },
        {{4, 6}, {6, 6}, {6, 6}, {6, 6}, {4, 6}}) <= kTol);
}

TEST_CASE("negative control: a wrong backward is caught") {
  // custom op computes x^2 but claims gradient 3x; the checker must flag it
  auto fn = [](Tape& t, const std::vector<Value>& in) {
    const Tensor& x = t.value(in[0]);
    Tensor out = x;
    for (double& v : out.data) v = v * v;
    auto y = t.custom_unary(in[0], out,
                            [](const Tensor& og, const Tensor& iv, Tensor& ig) {
                              for (std::size_t i = 0; i < ig.data.size(); ++i) {
                                ig.data[i] += og.data[i] * 3.0 * iv.data[i];
                              }
                            });
    return t.sum(y);
  };
  CHECK(diffmath::grad_check(fn, {{2, 3}}, 5) > 0.1);
}
