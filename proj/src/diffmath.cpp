#include "factharness/diffmath.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "factharness/error.hpp"
#include "factharness/rng.hpp"

namespace factharness::diffmath {

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  std::size_t n = 1;
  for (std::size_t dim : shape) n *= dim;
  if (shape.empty() || n != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t dim : shape) n *= dim;
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(n, 0.0);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a, const Tensor& b) {
  throw ShapeError(op + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

}  // namespace

Value Tape::push(Tensor value, std::function<void()> backward_fn) {
  Node node;
  node.grad = Tensor::zeros(value.shape);
  node.value = std::move(value);
  node.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return Value{nodes_.size() - 1};
}

Value Tape::input(Tensor t) { return push(std::move(t), {}); }

const Tensor& Tape::value(Value v) const { return nodes_.at(v.id).value; }
const Tensor& Tape::grad(Value v) const { return nodes_.at(v.id).grad; }

Value Tape::matmul(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.cols() != tb.rows()) {
    shape_fail("matmul", ta, tb);
  }
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * tb.at(p, j);
    }
  }
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, b, v, m, k, n] {
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& ta2 = nodes_[a.id].value;
    const Tensor& tb2 = nodes_[b.id].value;
    Tensor& ga = nodes_[a.id].grad;
    Tensor& gb = nodes_[b.id].grad;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gv = g.at(i, j);
        if (gv == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          ga.at(i, p) += gv * tb2.at(p, j);
          gb.at(p, j) += gv * ta2.at(i, p);
        }
      }
    }
  };
  return v;
}

Value Tape::transpose(Value a) {
  const Tensor& ta = value(a);
  if (ta.shape.size() != 2) throw ShapeError("transpose: needs rank 2, got " + ta.shape_str());
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = ta.at(i, j);
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, v, m, n] {
    const Tensor& g = nodes_[v.id].grad;
    Tensor& ga = nodes_[a.id].grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
  };
  return v;
}

Value Tape::add(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool broadcast = ta.shape.size() == 2 && tb.shape.size() == 1 &&
                         tb.shape[0] == ta.cols();
  if (!broadcast && !ta.same_shape(tb)) shape_fail("add", ta, tb);
  Tensor out = ta;
  if (broadcast) {
    for (std::size_t i = 0; i < ta.rows(); ++i)
      for (std::size_t j = 0; j < ta.cols(); ++j) out.at(i, j) += tb.data[j];
  } else {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  }
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, b, v, broadcast] {
    const Tensor& g = nodes_[v.id].grad;
    Tensor& ga = nodes_[a.id].grad;
    Tensor& gb = nodes_[b.id].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    if (broadcast) {
      const std::size_t cols = g.cols();
      for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i % cols] += g.data[i];
    } else {
      for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
    }
  };
  return v;
}

Value Tape::concat(const std::vector<Value>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  const Tensor& first = value(xs[0]);
  if (first.shape.size() != 2) {
    throw ShapeError("concat: needs rank 2, got " + first.shape_str());
  }
  std::size_t rows = first.rows(), cols = first.cols();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Tensor& t = value(xs[i]);
    if (t.shape.size() != 2) shape_fail("concat", first, t);
    if (axis == 0) {
      if (t.cols() != cols) shape_fail("concat", first, t);
      rows += t.rows();
    } else {
      if (t.rows() != rows) shape_fail("concat", first, t);
      cols += t.cols();
    }
  }

  Tensor out = Tensor::zeros({rows, cols});
  std::size_t offset = 0;
  for (Value x : xs) {
    const Tensor& t = value(x);
    for (std::size_t i = 0; i < t.rows(); ++i) {
      for (std::size_t j = 0; j < t.cols(); ++j) {
        if (axis == 0) {
          out.at(offset + i, j) = t.at(i, j);
        } else {
          out.at(i, offset + j) = t.at(i, j);
        }
      }
    }
    offset += axis == 0 ? t.rows() : t.cols();
  }
  Value v = push(std::move(out), {});
  std::vector<Value> parents = xs;
  nodes_[v.id].backward_fn = [this, parents, v, axis] {
    const Tensor& g = nodes_[v.id].grad;
    std::size_t offset = 0;
    for (Value x : parents) {
      Tensor& gx = nodes_[x.id].grad;
      const Tensor& tx = nodes_[x.id].value;
      for (std::size_t i = 0; i < tx.rows(); ++i) {
        for (std::size_t j = 0; j < tx.cols(); ++j) {
          gx.at(i, j) += axis == 0 ? g.at(offset + i, j) : g.at(i, offset + j);
        }
      }
      offset += axis == 0 ? tx.rows() : tx.cols();
    }
  };
  return v;
}

Value Tape::softmax(Value a, std::size_t axis) {
  const Tensor& ta = value(a);
  if (ta.shape.size() != 2 || axis > 1) {
    throw ShapeError("softmax: needs rank 2 and axis 0/1, got " + ta.shape_str());
  }
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({m, n});
  const std::size_t lanes = axis == 1 ? m : n;
  const std::size_t width = axis == 1 ? n : m;
  auto elem = [axis](Tensor& t, std::size_t lane, std::size_t pos) -> double& {
    return axis == 1 ? t.at(lane, pos) : t.at(pos, lane);
  };
  auto celem = [axis](const Tensor& t, std::size_t lane, std::size_t pos) {
    return axis == 1 ? t.at(lane, pos) : t.at(pos, lane);
  };
  for (std::size_t l = 0; l < lanes; ++l) {
    double mx = celem(ta, l, 0);
    for (std::size_t p = 1; p < width; ++p) mx = std::max(mx, celem(ta, l, p));
    double total = 0.0;
    for (std::size_t p = 0; p < width; ++p) {
      double e = std::exp(celem(ta, l, p) - mx);
      elem(out, l, p) = e;
      total += e;
    }
    for (std::size_t p = 0; p < width; ++p) elem(out, l, p) /= total;
  }
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, v, axis, lanes, width, celem] {
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& y = nodes_[v.id].value;
    Tensor& ga = nodes_[a.id].grad;
    for (std::size_t l = 0; l < lanes; ++l) {
      double dot = 0.0;
      for (std::size_t p = 0; p < width; ++p) dot += celem(g, l, p) * celem(y, l, p);
      for (std::size_t p = 0; p < width; ++p) {
        double gi = celem(y, l, p) * (celem(g, l, p) - dot);
        if (axis == 1) {
          ga.at(l, p) += gi;
        } else {
          ga.at(p, l) += gi;
        }
      }
    }
  };
  return v;
}

Value Tape::scale(Value a, double factor) {
  Tensor out = value(a);
  for (double& x : out.data) x *= factor;
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, v, factor] {
    const Tensor& g = nodes_[v.id].grad;
    Tensor& ga = nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += factor * g.data[i];
  };
  return v;
}

Value Tape::sigmoid(Value a) {
  Tensor out = value(a);
  for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, v] {
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& y = nodes_[v.id].value;
    Tensor& ga = nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    }
  };
  return v;
}

Value Tape::relu(Value a) {
  Tensor out = value(a);
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, v] {
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& x = nodes_[a.id].value;
    Tensor& ga = nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      if (x.data[i] > 0.0) ga.data[i] += g.data[i];
    }
  };
  return v;
}

Value Tape::layer_norm(Value a, Value gain, Value bias) {
  constexpr double kEps = 1e-5;
  const Tensor& ta = value(a);
  const Tensor& tg = value(gain);
  const Tensor& tb = value(bias);
  if (ta.shape.size() != 2 || tg.shape.size() != 1 || tb.shape.size() != 1 ||
      tg.shape[0] != ta.cols() || tb.shape[0] != ta.cols()) {
    throw ShapeError("layer_norm: input " + ta.shape_str() + ", gain " + tg.shape_str() +
                     ", bias " + tb.shape_str());
  }
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += ta.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = ta.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + kEps);
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = (ta.at(i, j) - mean) * inv * tg.data[j] + tb.data[j];
    }
  }
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, gain, bias, v, m, n] {
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& x = nodes_[a.id].value;
    const Tensor& gn = nodes_[gain.id].value;
    Tensor& gx = nodes_[a.id].grad;
    Tensor& ggain = nodes_[gain.id].grad;
    Tensor& gbias = nodes_[bias.id].grad;
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += x.at(i, j);
      mean /= dn;
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double d = x.at(i, j) - mean;
        var += d * d;
      }
      var /= dn;
      double inv = 1.0 / std::sqrt(var + 1e-5);
      // dxhat = g * gain; then the standard two-correction form
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double xhat = (x.at(i, j) - mean) * inv;
        double dxhat = g.at(i, j) * gn.data[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        ggain.data[j] += g.at(i, j) * xhat;
        gbias.data[j] += g.at(i, j);
      }
      for (std::size_t j = 0; j < n; ++j) {
        double xhat = (x.at(i, j) - mean) * inv;
        double dxhat = g.at(i, j) * gn.data[j];
        gx.at(i, j) += inv * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn);
      }
    }
  };
  return v;
}

Value Tape::embedding_lookup(Value table, const std::vector<std::size_t>& ids) {
  const Tensor& tt = value(table);
  if (tt.shape.size() != 2) {
    throw ShapeError("embedding_lookup: table must be rank 2, got " + tt.shape_str());
  }
  for (std::size_t id : ids) {
    if (id >= tt.rows()) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of table " +
                       tt.shape_str());
    }
  }
  const std::size_t d = tt.cols();
  Tensor out = Tensor::zeros({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = tt.at(ids[i], j);
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, table, v, ids, d] {
    const Tensor& g = nodes_[v.id].grad;
    Tensor& gt = nodes_[table.id].grad;
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt.at(ids[i], j) += g.at(i, j);
  };
  return v;
}

Value Tape::max_over_set(const std::vector<Value>& xs) {
  if (xs.empty()) throw ShapeError("max_over_set: empty input list");
  const Tensor& first = value(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (!value(xs[i]).same_shape(first)) shape_fail("max_over_set", first, value(xs[i]));
  }
  Tensor out = first;
  std::vector<std::size_t> winner(first.numel(), 0);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const Tensor& t = value(xs[k]);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      if (t.data[i] > out.data[i]) {  // strict: ties stay with the lowest index
        out.data[i] = t.data[i];
        winner[i] = k;
      }
    }
  }
  Value v = push(std::move(out), {});
  std::vector<Value> parents = xs;
  nodes_[v.id].backward_fn = [this, parents, v, winner = std::move(winner)] {
    const Tensor& g = nodes_[v.id].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      nodes_[parents[winner[i]].id].grad.data[i] += g.data[i];
    }
  };
  return v;
}

Value Tape::elementwise_mul(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) shape_fail("elementwise_mul", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, b, v] {
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& ta2 = nodes_[a.id].value;
    const Tensor& tb2 = nodes_[b.id].value;
    Tensor& ga = nodes_[a.id].grad;
    Tensor& gb = nodes_[b.id].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      ga.data[i] += g.data[i] * tb2.data[i];
      gb.data[i] += g.data[i] * ta2.data[i];
    }
  };
  return v;
}

Value Tape::cross_entropy_with_logits(Value logits, const std::vector<std::size_t>& targets,
                                      const std::vector<double>& mask, Reduction reduction) {
  const Tensor& tl = value(logits);
  if (tl.shape.size() != 2 || targets.size() != tl.rows() || mask.size() != tl.rows()) {
    throw ShapeError("cross_entropy_with_logits: logits " + tl.shape_str() + ", " +
                     std::to_string(targets.size()) + " targets, " +
                     std::to_string(mask.size()) + " mask entries");
  }
  const std::size_t m = tl.rows(), n = tl.cols();
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) {
      throw ShapeError("cross_entropy_with_logits: target " + std::to_string(targets[i]) +
                       " out of vocab " + std::to_string(n));
    }
  }
  double active = 0.0;
  for (double w : mask) active += w != 0.0 ? 1.0 : 0.0;
  if (reduction == Reduction::kMean && active == 0.0) {
    throw ValidationError("cross_entropy_with_logits: mean over zero unmasked rows");
  }
  const double denom = reduction == Reduction::kMean ? active : 1.0;

  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (mask[i] == 0.0) continue;
    double mx = tl.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, tl.at(i, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < n; ++j) lse += std::exp(tl.at(i, j) - mx);
    total += mx + std::log(lse) - tl.at(i, targets[i]);
  }
  Tensor out({1}, {total / denom});
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, logits, v, targets, mask, denom, m, n] {
    const double gscale = nodes_[v.id].grad.data[0] / denom;
    const Tensor& tl2 = nodes_[logits.id].value;
    Tensor& gl = nodes_[logits.id].grad;
    for (std::size_t i = 0; i < m; ++i) {
      if (mask[i] == 0.0) continue;
      double mx = tl2.at(i, 0);
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, tl2.at(i, j));
      double lse = 0.0;
      for (std::size_t j = 0; j < n; ++j) lse += std::exp(tl2.at(i, j) - mx);
      for (std::size_t j = 0; j < n; ++j) {
        double p = std::exp(tl2.at(i, j) - mx) / lse;
        gl.at(i, j) += gscale * (p - (j == targets[i] ? 1.0 : 0.0));
      }
    }
  };
  return v;
}

Value Tape::sum(Value a) {
  const Tensor& ta = value(a);
  double total = 0.0;
  for (double x : ta.data) total += x;
  Value v = push(Tensor({1}, {total}), {});
  nodes_[v.id].backward_fn = [this, a, v] {
    const double g = nodes_[v.id].grad.data[0];
    Tensor& ga = nodes_[a.id].grad;
    for (double& x : ga.data) x += g;
  };
  return v;
}

Value Tape::slice_cols(Value a, std::size_t c0, std::size_t c1) {
  const Tensor& ta = value(a);
  if (ta.shape.size() != 2 || c0 >= c1 || c1 > ta.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") of " + ta.shape_str());
  }
  const std::size_t m = ta.rows(), w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = ta.at(i, c0 + j);
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, a, v, c0, m, w] {
    const Tensor& g = nodes_[v.id].grad;
    Tensor& ga = nodes_[a.id].grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga.at(i, c0 + j) += g.at(i, j);
  };
  return v;
}

Value Tape::custom_unary(Value parent, Tensor out,
                         std::function<void(const Tensor&, const Tensor&, Tensor&)> backward) {
  Value v = push(std::move(out), {});
  nodes_[v.id].backward_fn = [this, parent, v, backward = std::move(backward)] {
    backward(nodes_[v.id].grad, nodes_[parent.id].value, nodes_[parent.id].grad);
  };
  return v;
}

void Tape::backward(Value loss) {
  if (value(loss).numel() != 1) {
    throw ShapeError("backward: loss must be a single element, got " +
                     value(loss).shape_str());
  }
  grad_mut(loss).data[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].backward_fn) nodes_[i].backward_fn();
  }
}

double grad_check(const std::function<Value(Tape&, const std::vector<Value>&)>& fn,
                  const std::vector<std::vector<std::size_t>>& input_shapes,
                  std::uint64_t seed) {
  constexpr double kStep = 1e-5;
  Rng rng(seed);
  std::vector<Tensor> inputs;
  for (const auto& shape : input_shapes) {
    Tensor t = Tensor::zeros(shape);
    for (double& x : t.data) x = rng.normal();
    inputs.push_back(std::move(t));
  }

  // inputs are pushed first, so leaf i is Value{i} on any tape built here
  auto eval = [&fn](const std::vector<Tensor>& ins, Tape& tape) {
    std::vector<Value> vals;
    vals.reserve(ins.size());
    for (const auto& t : ins) vals.push_back(tape.input(t));
    Value out = fn(tape, vals);
    if (tape.value(out).numel() != 1) {
      throw ValidationError("grad_check: fn must produce a scalar");
    }
    return out;
  };
  auto eval_scalar = [&eval](const std::vector<Tensor>& ins) {
    Tape tape;
    return tape.value(eval(ins, tape)).data[0];
  };

  Tape tape;
  tape.backward(eval(inputs, tape));
  std::vector<Tensor> analytic;
  for (std::size_t i = 0; i < inputs.size(); ++i) analytic.push_back(tape.grad(Value{i}));

  double max_rel = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].data.size(); ++i) {
      const double orig = inputs[t].data[i];
      inputs[t].data[i] = orig + kStep;
      double up = eval_scalar(inputs);
      inputs[t].data[i] = orig - kStep;
      double down = eval_scalar(inputs);
      inputs[t].data[i] = orig;

      double numeric = (up - down) / (2.0 * kStep);
      double exact = analytic[t].data[i];
      if (!std::isfinite(numeric) || !std::isfinite(exact)) {
        throw ValidationError("grad_check: non-finite gradient encountered");
      }
      double rel = std::abs(numeric - exact) /
                   std::max({std::abs(numeric), std::abs(exact), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace factharness::diffmath
