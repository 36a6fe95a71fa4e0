#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gml/ops.hpp"
#include "gml/tensor.hpp"

// Reverse-mode autodiff on an eager tape. Every op records its output value
// plus a closure that scatters the output gradient back to the inputs. Nodes
// that cannot influence any differentiable leaf are skipped entirely, both
// when allocating gradient buffers and when walking the tape backwards.

namespace gml {

// Named trainable parameters, owned outside any tape so several tapes (one
// per sample) can accumulate gradients into the same buffers.
template <typename R>
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor<R> value;
    Tensor<R> grad;
  };

  std::vector<Entry> entries;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, Tensor<R> value) {
    if (index.count(name)) throw Error("duplicate parameter name: " + name);
    const int slot = static_cast<int>(entries.size());
    Tensor<R> grad(value.shape, R(0));
    entries.push_back(Entry{name, std::move(value), std::move(grad)});
    index.emplace(name, slot);
    return slot;
  }

  int slot_of(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }

  Entry& at(int slot) { return entries.at(static_cast<std::size_t>(slot)); }
  const Entry& at(int slot) const { return entries.at(static_cast<std::size_t>(slot)); }
  int size() const { return static_cast<int>(entries.size()); }

  void zero_grad() {
    for (auto& e : entries) e.grad.fill(R(0));
  }

  std::int64_t total_elems() const {
    std::int64_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
  }
};

template <typename R>
class Tape {
 public:
  explicit Tape(const ParamStore<R>* params = nullptr) : params_(params) {}

  // --- leaves -------------------------------------------------------------

  int input(Tensor<R> v, bool want_grad = false) {
    return push(std::move(v), {}, nullptr, -1, want_grad);
  }

  int param(int slot) {
    if (!params_) throw Error("tape has no parameter store");
    auto it = slot_nodes_.find(slot);
    if (it != slot_nodes_.end()) return it->second;
    const int id = push(params_->at(slot).value, {}, nullptr, slot, true);
    slot_nodes_.emplace(slot, id);
    return id;
  }

  int param(const std::string& name) { return param(params_->slot_of(name)); }

  // --- ops ----------------------------------------------------------------

  int conv_pointwise(int x, int w, int b) {
    Tensor<R> out = ops::conv_pointwise(val(x), val(w), val(b));
    return push(std::move(out), {x, w, b}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      ops::conv_pointwise_backward(n.grad, tp.val(n.in[0]), tp.val(n.in[1]), tp.gsink(n.in[0]),
                                   tp.gsink(n.in[1]), tp.gsink(n.in[2]));
    });
  }

  int conv_cw_spatial(int x, int k) {
    Tensor<R> out = ops::conv_channelwise_spatial(val(x), val(k));
    return push(std::move(out), {x, k}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      ops::conv_channelwise_spatial_backward(n.grad, tp.val(n.in[0]), tp.val(n.in[1]),
                                             tp.gsink(n.in[0]), tp.gsink(n.in[1]));
    });
  }

  int conv_cw_temporal(int x, int k) {
    Tensor<R> out = ops::conv_channelwise_temporal(val(x), val(k));
    return push(std::move(out), {x, k}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      ops::conv_channelwise_temporal_backward(n.grad, tp.val(n.in[0]), tp.val(n.in[1]),
                                              tp.gsink(n.in[0]), tp.gsink(n.in[1]));
    });
  }

  int shifted_subtract(int cur, int pre) {
    Tensor<R> out = ops::shifted_subtract(val(cur), val(pre));
    return push(std::move(out), {cur, pre}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      ops::shifted_subtract_backward(n.grad, tp.gsink(n.in[0]), tp.gsink(n.in[1]));
    });
  }

  int add(int x, int y) {
    Tensor<R> out = ops::add(val(x), val(y));
    return push(std::move(out), {x, y}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      for (int which = 0; which < 2; ++which)
        if (Tensor<R>* d = tp.gsink(n.in[which]))
          for (std::int64_t i = 0; i < n.grad.numel(); ++i) d->data[i] += n.grad.data[i];
    });
  }

  int relu(int x) {
    Tensor<R> out = ops::relu(val(x));
    return push(std::move(out), {x}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      if (Tensor<R>* d = tp.gsink(n.in[0])) ops::relu_backward(n.grad, tp.val(n.in[0]), d);
    });
  }

  int mean_pool_2x2(int x) {
    Tensor<R> out = ops::mean_pool_2x2(val(x));
    return push(std::move(out), {x}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      if (Tensor<R>* d = tp.gsink(n.in[0]))
        ops::mean_pool_2x2_backward(n.grad, tp.val(n.in[0]).shape, d);
    });
  }

  int global_avg_pool(int x) {
    Tensor<R> out = ops::global_avg_pool(val(x));
    return push(std::move(out), {x}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      if (Tensor<R>* d = tp.gsink(n.in[0]))
        ops::global_avg_pool_backward(n.grad, tp.val(n.in[0]).shape, d);
    });
  }

  int linear(int v, int w, int b) {
    Tensor<R> out = ops::linear(val(v), val(w), val(b));
    return push(std::move(out), {v, w, b}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      ops::linear_backward(n.grad, tp.val(n.in[0]), tp.val(n.in[1]), tp.gsink(n.in[0]),
                           tp.gsink(n.in[1]), tp.gsink(n.in[2]));
    });
  }

  int softmax_cross_entropy(int logits, std::vector<int> labels) {
    Tensor<R> out({1}, ops::softmax_cross_entropy(val(logits), labels));
    return push(std::move(out), {logits}, [labels](Tape& tp, int id) {
      const auto& n = tp.node(id);
      if (Tensor<R>* d = tp.gsink(n.in[0]))
        ops::softmax_cross_entropy_backward(n.grad.data[0], tp.val(n.in[0]), labels, d);
    });
  }

  int l1_norm(int x) {
    Tensor<R> out({1}, ops::l1_norm(val(x)));
    return push(std::move(out), {x}, [](Tape& tp, int id) {
      const auto& n = tp.node(id);
      if (Tensor<R>* d = tp.gsink(n.in[0])) ops::l1_norm_backward(n.grad.data[0], tp.val(n.in[0]), d);
    });
  }

  int masked_l1(int x, std::vector<R> mask) {
    Tensor<R> out({1}, ops::masked_l1_sum(val(x), mask));
    return push(std::move(out), {x}, [mask](Tape& tp, int id) {
      const auto& n = tp.node(id);
      if (Tensor<R>* d = tp.gsink(n.in[0]))
        ops::masked_l1_sum_backward(n.grad.data[0], tp.val(n.in[0]), mask, d);
    });
  }

  // Scalarizer for gradient checks: sum_i weights[i] * x[i].
  int weighted_sum(int x, Tensor<R> weights) {
    if (!same_shape(val(x), weights)) throw DimError("weighted_sum: weight shape mismatch");
    Tensor<R> out({1}, ops::detail::dot(val(x).data.data(), weights.data.data(), weights.numel()));
    auto wptr = std::make_shared<Tensor<R>>(std::move(weights));
    return push(std::move(out), {x}, [wptr](Tape& tp, int id) {
      const auto& n = tp.node(id);
      if (Tensor<R>* d = tp.gsink(n.in[0]))
        ops::detail::axpy(d->data.data(), wptr->data.data(), n.grad.data[0], wptr->numel());
    });
  }

  // sum_i coeffs[i] * scalar_node[i]; zero coefficients contribute nothing
  // forward or backward, so disabled loss terms stay out of the graph.
  int affine_combine(const std::vector<int>& ids, const std::vector<R>& coeffs) {
    if (ids.size() != coeffs.size()) throw DimError("affine_combine: ids/coeffs length mismatch");
    R total = R(0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (val(ids[i]).numel() != 1) throw DimError("affine_combine: inputs must be scalars");
      total += coeffs[i] * val(ids[i]).data[0];
    }
    std::vector<int> in = ids;
    return push(Tensor<R>({1}, total), std::move(in), [coeffs](Tape& tp, int id) {
      const auto& n = tp.node(id);
      for (std::size_t i = 0; i < coeffs.size(); ++i) {
        if (coeffs[i] == R(0)) continue;
        if (Tensor<R>* d = tp.gsink(n.in[i])) d->data[0] += coeffs[i] * n.grad.data[0];
      }
    });
  }

  // --- access & backward ----------------------------------------------------

  const Tensor<R>& val(int id) const { return node(id).value; }

  const Tensor<R>& grad_of(int id) const {
    const NodeRec& n = node(id);
    if (!n.has_grad) throw Error("node has no gradient (backward not run or node unreachable)");
    return n.grad;
  }

  bool has_gradient(int id) const { return node(id).has_grad; }

  // Propagates from a scalar root down the tape, freeing interior gradient
  // buffers as soon as they have been consumed. Leaf gradients survive.
  void backward(int root) {
    NodeRec& rn = node(root);
    if (rn.value.numel() != 1) throw Error("backward: root must be a scalar node");
    if (!rn.needs_grad) return;
    Tensor<R>* seed = gsink(root);
    seed->data[0] += R(1);
    for (int id = root; id >= 0; --id) {
      NodeRec& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.has_grad || !n.bp) continue;
      n.bp(*this, id);
      n.grad = Tensor<R>();
      n.has_grad = false;
    }
  }

  // Adds every parameter-leaf gradient into the store, in slot order.
  void accumulate_param_grads(ParamStore<R>& into) {
    if (&into != params_) throw Error("gradient sink is not this tape's parameter store");
    std::vector<std::pair<int, int>> order(slot_nodes_.begin(), slot_nodes_.end());
    std::sort(order.begin(), order.end());
    for (const auto& [slot, id] : order) {
      const NodeRec& n = node(id);
      if (!n.has_grad) continue;
      Tensor<R>& g = into.at(slot).grad;
      ops::detail::axpy(g.data.data(), n.grad.data.data(), R(1), g.numel());
    }
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct NodeRec {
    Tensor<R> value;
    Tensor<R> grad;
    std::vector<int> in;
    std::function<void(Tape&, int)> bp;
    int param_slot = -1;
    bool needs_grad = false;
    bool has_grad = false;
  };

  NodeRec& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const NodeRec& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  // Gradient buffer of a node, or nullptr if nothing below it is trainable.
  Tensor<R>* gsink(int id) {
    NodeRec& n = node(id);
    if (!n.needs_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor<R>(n.value.shape, R(0));
      n.has_grad = true;
    }
    return &n.grad;
  }

  int push(Tensor<R> value, std::vector<int> in, std::function<void(Tape&, int)> bp,
           int param_slot = -1, bool want_grad = false) {
    NodeRec n;
    n.value = std::move(value);
    n.in = std::move(in);
    n.bp = std::move(bp);
    n.param_slot = param_slot;
    n.needs_grad = want_grad || param_slot >= 0;
    for (int i : n.in)
      if (node(i).needs_grad) n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const ParamStore<R>* params_;
  std::vector<NodeRec> nodes_;
  std::unordered_map<int, int> slot_nodes_;
};

}  // namespace gml
