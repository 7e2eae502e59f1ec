#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "deblurdiff/tensor.hpp"

namespace deblurdiff {

// Named parameter tensors. std::map keeps iteration order (and therefore
// optimizer updates and checkpoint layout) stable.
template <typename T>
using ParamStore = std::map<std::string, Tensor<T>>;
template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

template <typename T>
class Tape;

// Handle to a node on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
};

// Reverse-mode tape. Every op records its forward function (for replay) and a
// backward function that accumulates into the gradients of its inputs.
// Backward visits nodes in exact reverse execution order.
template <typename T>
class Tape {
 public:
  using Inputs = std::vector<const Tensor<T>*>;
  using ForwardFn = std::function<Tensor<T>(const Inputs&)>;
  // gin[i] is null when input i does not need a gradient; implementations add
  // into the non-null entries.
  using BackwardFn = std::function<void(const Inputs& in, const Tensor<T>& out,
                                        const Tensor<T>& gout, const std::vector<Tensor<T>*>& gin)>;

  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor<T> value;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, int(nodes_.size()) - 1};
  }

  // Registers a named parameter leaf. Asking for the same name twice returns
  // the same node, so shared weights accumulate gradient naturally.
  Var<T> param(const std::string& name, const Tensor<T>& value) {
    if (auto it = params_.find(name); it != params_.end()) {
      if (nodes_[std::size_t(it->second)].value.shape() != value.shape())
        throw ShapeError("parameter '" + name + "' re-registered with a different shape");
      return {this, it->second};
    }
    Node n;
    n.op = "param";
    n.value = value;
    n.requires_grad = grad_enabled_;
    n.param_name = name;
    nodes_.push_back(std::move(n));
    const int id = int(nodes_.size()) - 1;
    params_.emplace(name, id);
    return {this, id};
  }

  Var<T> param(const ParamStore<T>& store, const std::string& name) {
    auto it = store.find(name);
    if (it == store.end()) throw ValueError("unknown parameter '" + name + "'");
    return param(name, it->second);
  }

  Var<T> record(std::string op, const std::vector<Var<T>>& inputs, ForwardFn fwd,
                BackwardFn bwd) {
    Inputs in;
    in.reserve(inputs.size());
    bool needs_grad = false;
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (const auto& v : inputs) {
      if (v.tape != this) throw Error(op + ": input belongs to a different tape");
      in.push_back(&nodes_[std::size_t(v.id)].value);
      needs_grad = needs_grad || nodes_[std::size_t(v.id)].requires_grad;
      ids.push_back(v.id);
    }
    Tensor<T> out = fwd(in);
    if (!out.all_finite()) throw NumericError(op + " produced a non-finite value");
    Node n;
    n.op = std::move(op);
    n.inputs = std::move(ids);
    n.value = std::move(out);
    n.forward = std::move(fwd);
    n.requires_grad = grad_enabled_ && needs_grad;
    if (n.requires_grad) n.backward = std::move(bwd);
    nodes_.push_back(std::move(n));
    return {this, int(nodes_.size()) - 1};
  }

  const Tensor<T>& value(int id) const { return nodes_.at(std::size_t(id)).value; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::map<std::string, int>& params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

  // Re-executes every recorded op from the recorded input values and reports
  // whether all outputs are reproduced bit-exactly.
  bool replay_matches() const {
    for (const auto& n : nodes_) {
      if (!n.forward) continue;
      Inputs in;
      for (int id : n.inputs) in.push_back(&nodes_[std::size_t(id)].value);
      if (!(n.forward(in) == n.value)) return false;
    }
    return true;
  }

  // Gradients of a scalar node with respect to every registered parameter.
  // Registered parameters the loss does not reach get zeros.
  GradMap<T> backward(Var<T> loss) const {
    if (loss.tape != this) throw Error("backward: loss belongs to a different tape");
    const auto& lv = value(loss.id);
    if (!lv.is_scalar()) throw ShapeError("backward: loss must be a scalar, got " + shape_str(lv.shape()));

    std::vector<std::unique_ptr<Tensor<T>>> grads(nodes_.size());
    grads[std::size_t(loss.id)] = std::make_unique<Tensor<T>>(lv.shape(), T(1));

    for (int i = loss.id; i >= 0; --i) {
      const auto& n = nodes_[std::size_t(i)];
      auto& g = grads[std::size_t(i)];
      if (!g || !n.requires_grad || !n.backward) continue;
      Inputs in;
      std::vector<Tensor<T>*> gin;
      in.reserve(n.inputs.size());
      gin.reserve(n.inputs.size());
      for (int id : n.inputs) {
        const auto& src = nodes_[std::size_t(id)];
        in.push_back(&src.value);
        if (src.requires_grad) {
          auto& slot = grads[std::size_t(id)];
          if (!slot) slot = std::make_unique<Tensor<T>>(src.value.shape());
          gin.push_back(slot.get());
        } else {
          gin.push_back(nullptr);
        }
      }
      n.backward(in, n.value, *g, gin);
      if (n.op != "param") g.reset();
    }

    GradMap<T> out;
    for (const auto& [name, id] : params_) {
      auto& g = grads[std::size_t(id)];
      out.emplace(name, g ? std::move(*g) : Tensor<T>(nodes_[std::size_t(id)].value.shape()));
    }
    return out;
  }

  // As above, but also emits zero gradients for every entry of `store` that
  // was never registered on this tape.
  GradMap<T> backward(Var<T> loss, const ParamStore<T>& store) const {
    GradMap<T> out = backward(loss);
    for (const auto& [name, t] : store)
      if (!out.count(name)) out.emplace(name, Tensor<T>(t.shape()));
    return out;
  }

 private:
  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
};

template <typename T>
void accumulate(GradMap<T>& into, const GradMap<T>& g) {
  for (const auto& [name, t] : g) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, t);
      continue;
    }
    require_same_shape(it->second, t, "accumulate");
    for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += t[i];
  }
}

}  // namespace deblurdiff
