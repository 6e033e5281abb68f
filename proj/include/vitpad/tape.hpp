#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vitpad/errors.hpp"
#include "vitpad/tensor.hpp"

namespace vitpad {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode recording of primitive operations. Nodes are appended in
// execution order, so every operand precedes its consumers. Only nodes that
// depend on a trainable parameter (or a watched node) keep a backward rule.
template <typename T>
class Tape {
 public:
  using ForwardFn = std::function<Tensor<T>(const Tape&)>;
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor<T> value) { return push_leaf(std::move(value), {}, false); }

  Var parameter(std::string name, Tensor<T> value, bool trainable) {
    return push_leaf(std::move(value), std::move(name), trainable);
  }

  // Records a derived value. The forward rule runs immediately and is kept so
  // the tape can be replayed.
  Var record(std::string op, std::vector<std::size_t> inputs, ForwardFn forward, BackwardFn backward) {
    for (auto in : inputs) {
      if (in >= nodes_.size()) throw ContractError("tape operand recorded after its consumer");
    }
    Node node;
    node.op = std::move(op);
    node.value = forward(*this);
    for (auto in : inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    node.inputs = std::move(inputs);
    node.forward = std::move(forward);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  // Forces gradient tracking from this node onward. Must be called before
  // any consumer is recorded.
  void watch(Var v) {
    auto& n = nodes_.at(v.id);
    n.watched = true;
    if (!n.requires_grad) {
      n.requires_grad = true;
      if (!n.backward) n.backward = [](Tape&, std::size_t) {};
    }
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  // Gradient accumulated at a node by the last backprop; zeros if none reached it.
  Tensor<T> grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>::zeros(n.value.shape()) : n.grad;
  }

  // Adds g into the gradient buffer of node id (no-op for untracked nodes).
  void accumulate(std::size_t id, const Tensor<T>& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  const Tensor<T>& grad_buffer(std::size_t id) const { return nodes_[id].grad; }

  // Reverse sweep from `output` seeded with `seed`. Returns dOutput/dθ for every
  // trainable parameter; frozen parameters get no entry.
  std::map<std::string, Tensor<T>> backprop(Var output, const Tensor<T>& seed) {
    if (nodes_.empty()) throw ContractError("backprop on an empty tape");
    const auto& out = nodes_.at(output.id);
    if (seed.shape() != out.value.shape()) {
      throw DimensionError("backprop seed shape " + shape_str(seed.shape()) + " does not match output shape " +
                           shape_str(out.value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    accumulate(output.id, seed);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    std::map<std::string, Tensor<T>> grads;
    for (const auto& n : nodes_) {
      if (n.trainable) grads.emplace(n.name, n.grad.empty() ? Tensor<T>::zeros(n.value.shape()) : n.grad);
    }
    return grads;
  }

  // Re-runs every recorded forward rule in order and reports whether each
  // reproduces its stored value bit-exactly.
  bool replay_matches() const {
    for (const auto& n : nodes_) {
      if (n.forward && !(n.forward(*this) == n.value)) return false;
    }
    return true;
  }

 private:
  struct Node {
    std::string op;
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad = false;
    bool trainable = false;
    bool watched = false;
  };

  Var push_leaf(Tensor<T> value, std::string name, bool trainable) {
    Node node;
    node.op = name.empty() ? "constant" : "parameter";
    node.name = std::move(name);
    node.value = std::move(value);
    node.requires_grad = trainable;
    node.trainable = trainable;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// Differentiable operations. Each forward rule delegates to the plain tensor
// routine so recorded and replayed values agree bit for bit.
namespace ad {

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  return tape.record(
      "matmul", {a.id, b.id}, [a, b](const Tape<T>& t) { return vitpad::matmul(t.value(a), t.value(b)); },
      [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        if (t.requires_grad(a.id)) t.accumulate(a.id, vitpad::matmul_nt(g, t.value(b)));
        if (t.requires_grad(b.id)) t.accumulate(b.id, vitpad::matmul_tn(t.value(a), g));
      });
}

// a·bᵀ
template <typename T>
Var matmul_nt(Tape<T>& tape, Var a, Var b) {
  return tape.record(
      "matmul_nt", {a.id, b.id}, [a, b](const Tape<T>& t) { return vitpad::matmul_nt(t.value(a), t.value(b)); },
      [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        if (t.requires_grad(a.id)) t.accumulate(a.id, vitpad::matmul(g, t.value(b)));
        if (t.requires_grad(b.id)) t.accumulate(b.id, vitpad::matmul_tn(g, t.value(a)));
      });
}

// y = x·Wᵀ + bias, x [n,in], W [out,in], bias [out].
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var bias) {
  return tape.record(
      "linear", {x.id, w.id, bias.id},
      [x, w, bias](const Tape<T>& t) {
        auto y = vitpad::matmul_nt(t.value(x), t.value(w));
        const auto& b = t.value(bias);
        if (b.size() != y.dim(1)) {
          throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match output " +
                               shape_str(y.shape()));
        }
        for (std::size_t i = 0; i < y.dim(0); ++i)
          for (std::size_t j = 0; j < y.dim(1); ++j) y(i, j) += b[j];
        return y;
      },
      [x, w, bias](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        if (t.requires_grad(x.id)) t.accumulate(x.id, vitpad::matmul(g, t.value(w)));
        if (t.requires_grad(w.id)) t.accumulate(w.id, vitpad::matmul_tn(g, t.value(x)));
        if (t.requires_grad(bias.id)) {
          Tensor<T> gb(t.value(bias).shape());
          for (std::size_t i = 0; i < g.dim(0); ++i)
            for (std::size_t j = 0; j < g.dim(1); ++j) gb[j] += g(i, j);
          t.accumulate(bias.id, gb);
        }
      });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  return tape.record(
      "add", {a.id, b.id},
      [a, b](const Tape<T>& t) {
        const auto& x = t.value(a);
        const auto& y = t.value(b);
        if (x.shape() != y.shape()) {
          throw DimensionError("add: shapes differ: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
        }
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
        return out;
      },
      [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        t.accumulate(a.id, g);
        t.accumulate(b.id, g);
      });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  return tape.record(
      "scale", {a.id},
      [a, factor](const Tape<T>& t) {
        Tensor<T> out = t.value(a);
        for (auto& v : out.data()) v *= factor;
        return out;
      },
      [a, factor](Tape<T>& t, std::size_t self) {
        Tensor<T> g = t.grad_buffer(self);
        for (auto& v : g.data()) v *= factor;
        t.accumulate(a.id, g);
      });
}

template <typename T>
Var softmax_rows(Tape<T>& tape, Var a) {
  return tape.record(
      "softmax_rows", {a.id}, [a](const Tape<T>& t) { return vitpad::softmax_rows(t.value(a)); },
      [a](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& y = t.value(self);
        Tensor<T> gx(y.shape());
        for (std::size_t i = 0; i < y.dim(0); ++i) {
          T dot{0};
          for (std::size_t j = 0; j < y.dim(1); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.dim(1); ++j) gx(i, j) = y(i, j) * (g(i, j) - dot);
        }
        t.accumulate(a.id, gx);
      });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps) {
  return tape.record(
      "layer_norm", {x.id, gamma.id, beta.id},
      [x, gamma, beta, eps](const Tape<T>& t) {
        return vitpad::layer_norm(t.value(x), t.value(gamma), t.value(beta), eps);
      },
      [x, gamma, beta, eps](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& in = t.value(x);
        const auto& gam = t.value(gamma);
        const std::size_t d = in.shape().back();
        const std::size_t rows = in.size() / d;
        Tensor<T> gx(in.shape());
        Tensor<T> ggamma(gam.shape());
        Tensor<T> gbeta(gam.shape());
        std::vector<T> xhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xi = in.data().data() + r * d;
          const T* gi = g.data().data() + r * d;
          T mean{0};
          for (std::size_t j = 0; j < d; ++j) mean += xi[j];
          mean /= static_cast<T>(d);
          T var{0};
          for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
          var /= static_cast<T>(d);
          const T rstd = T{1} / std::sqrt(var + eps);
          T sum_dxhat{0}, sum_dxhat_xhat{0};
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (xi[j] - mean) * rstd;
            const T dxhat = gi[j] * gam[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat[j];
            ggamma[j] += gi[j] * xhat[j];
            gbeta[j] += gi[j];
          }
          T* gxi = gx.data().data() + r * d;
          const T inv_d = T{1} / static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dxhat = gi[j] * gam[j];
            gxi[j] = rstd * (dxhat - inv_d * sum_dxhat - xhat[j] * inv_d * sum_dxhat_xhat);
          }
        }
        t.accumulate(x.id, gx);
        t.accumulate(gamma.id, ggamma);
        t.accumulate(beta.id, gbeta);
      });
}

template <typename T>
Var gelu(Tape<T>& tape, Var a) {
  return tape.record(
      "gelu", {a.id}, [a](const Tape<T>& t) { return vitpad::gelu(t.value(a)); },
      [a](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& x = t.value(a);
        Tensor<T> gx(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * gelu_derivative(x[i]);
        t.accumulate(a.id, gx);
      });
}

// Columns [begin, end) of a matrix.
template <typename T>
Var slice_cols(Tape<T>& tape, Var a, std::size_t begin, std::size_t end) {
  return tape.record(
      "slice_cols", {a.id},
      [a, begin, end](const Tape<T>& t) {
        const auto& x = t.value(a);
        if (x.rank() != 2 || begin >= end || end > x.dim(1)) {
          throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                               ") out of range for " + shape_str(x.shape()));
        }
        Tensor<T> out({x.dim(0), end - begin});
        for (std::size_t i = 0; i < x.dim(0); ++i)
          for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = x(i, j);
        return out;
      },
      [a, begin, end](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        Tensor<T> gx(t.value(a).shape());
        for (std::size_t i = 0; i < g.dim(0); ++i)
          for (std::size_t j = begin; j < end; ++j) gx(i, j) = g(i, j - begin);
        t.accumulate(a.id, gx);
      });
}

// Rows [begin, end) of a matrix.
template <typename T>
Var slice_rows(Tape<T>& tape, Var a, std::size_t begin, std::size_t end) {
  return tape.record(
      "slice_rows", {a.id},
      [a, begin, end](const Tape<T>& t) {
        const auto& x = t.value(a);
        if (x.rank() != 2 || begin >= end || end > x.dim(0)) {
          throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                               ") out of range for " + shape_str(x.shape()));
        }
        const std::size_t n = x.dim(1);
        std::vector<T> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                            x.data().begin() + static_cast<std::ptrdiff_t>(end * n));
        return Tensor<T>({end - begin, n}, std::move(data));
      },
      [a, begin](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        Tensor<T> gx(t.value(a).shape());
        std::copy(g.data().begin(), g.data().end(),
                  gx.data().begin() + static_cast<std::ptrdiff_t>(begin * g.dim(1)));
        t.accumulate(a.id, gx);
      });
}

template <typename T>
Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts) {
  std::vector<std::size_t> ids;
  for (auto p : parts) ids.push_back(p.id);
  return tape.record(
      "concat_cols", ids,
      [parts](const Tape<T>& t) {
        const std::size_t rows = t.value(parts.front()).dim(0);
        std::size_t cols = 0;
        for (auto p : parts) {
          const auto& v = t.value(p);
          if (v.rank() != 2 || v.dim(0) != rows) {
            throw DimensionError("concat_cols: row count mismatch at " + shape_str(v.shape()));
          }
          cols += v.dim(1);
        }
        Tensor<T> out({rows, cols});
        std::size_t off = 0;
        for (auto p : parts) {
          const auto& v = t.value(p);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < v.dim(1); ++j) out(i, off + j) = v(i, j);
          off += v.dim(1);
        }
        return out;
      },
      [parts](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        std::size_t off = 0;
        for (auto p : parts) {
          const auto& v = t.value(p);
          if (t.requires_grad(p.id)) {
            Tensor<T> gp(v.shape());
            for (std::size_t i = 0; i < v.dim(0); ++i)
              for (std::size_t j = 0; j < v.dim(1); ++j) gp(i, j) = g(i, off + j);
            t.accumulate(p.id, gp);
          }
          off += v.dim(1);
        }
      });
}

template <typename T>
Var concat_rows(Tape<T>& tape, Var a, Var b) {
  return tape.record(
      "concat_rows", {a.id, b.id},
      [a, b](const Tape<T>& t) {
        const auto& x = t.value(a);
        const auto& y = t.value(b);
        if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1)) {
          throw DimensionError("concat_rows: " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
        }
        std::vector<T> data(x.data().begin(), x.data().end());
        data.insert(data.end(), y.data().begin(), y.data().end());
        return Tensor<T>({x.dim(0) + y.dim(0), x.dim(1)}, std::move(data));
      },
      [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& x = t.value(a);
        const auto split = static_cast<std::ptrdiff_t>(x.size());
        t.accumulate(a.id, Tensor<T>(x.shape(), std::vector<T>(g.data().begin(), g.data().begin() + split)));
        t.accumulate(b.id,
                     Tensor<T>(t.value(b).shape(), std::vector<T>(g.data().begin() + split, g.data().end())));
      });
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  return tape.record(
      "reshape", {a.id}, [a, shape](const Tape<T>& t) { return t.value(a).reshaped(shape); },
      [a](Tape<T>& t, std::size_t self) { t.accumulate(a.id, t.grad_buffer(self).reshaped(t.value(a).shape())); });
}

// Numerically stable binary cross-entropy on a single logit:
// max(z,0) − z·y + log(1 + e^{−|z|}).
template <typename T>
T bce_with_logit(T z, T y) {
  return std::max(z, T{0}) - z * y + std::log1p(std::exp(-std::abs(z)));
}

template <typename T>
Var bce_with_logit(Tape<T>& tape, Var logit, T label) {
  return tape.record(
      "bce", {logit.id},
      [logit, label](const Tape<T>& t) {
        const auto& z = t.value(logit);
        if (z.size() != 1) throw DimensionError("bce: expected a single logit, got " + shape_str(z.shape()));
        return Tensor<T>({1}, std::vector<T>{bce_with_logit(z[0], label)});
      },
      [logit, label](Tape<T>& t, std::size_t self) {
        const auto& z = t.value(logit);
        Tensor<T> g(z.shape());
        g[0] = t.grad_buffer(self)[0] * (sigmoid(z[0]) - label);
        t.accumulate(logit.id, g);
      });
}

}  // namespace ad

}  // namespace vitpad
