#pragma once

// Tape-free reverse mode: every Var owns a node that remembers its parents and
// a backward rule. Backward rules are written with Var ops themselves, so when
// gradients are requested with create_graph=true the gradient computation is
// recorded as an ordinary graph and can be differentiated again.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gmlabel/tensor.hpp"

namespace gmlabel::ad {

template <class T>
class Var;

template <class T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  const char* op = "const";
  std::vector<Var<T>> parents;
  // Returns one cotangent per parent; an undefined Var stands for zero.
  std::function<std::vector<Var<T>>(const Var<T>&)> backward;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_mode() { return grad_mode_flag(); }

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(grad_mode_flag()) { grad_mode_flag() = enabled; }
  ~GradModeGuard() { grad_mode_flag() = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

template <class T>
class Var {
 public:
  using value_type = T;

  Var() = default;

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var leaf(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->op = "leaf";
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  Node<T>* node() const noexcept { return node_.get(); }

  // Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

 private:
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  template <class U, class F>
  friend Var<U> make_op(const char*, Tensor<U>, std::vector<Var<U>>, F&&);

  std::shared_ptr<Node<T>> node_;
};

template <class T, class F>
Var<T> make_op(const char* name, Tensor<T> value, std::vector<Var<T>> parents, F&& backward) {
  bool track = false;
  if (grad_mode())
    for (const auto& p : parents) track = track || p.requires_grad();
  if (!track) return Var<T>::constant(std::move(value));
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = name;
  n->parents = std::move(parents);
  n->backward = std::forward<F>(backward);
  return Var<T>(std::move(n));
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

namespace detail {
inline const std::unordered_set<const void*>*& active_useful() {
  thread_local const std::unordered_set<const void*>* set = nullptr;
  return set;
}
}  // namespace detail

// True when a backward rule running inside grad() has to produce a cotangent for `v`.
template <class T>
bool needs_grad(const Var<T>& v) {
  if (!v.requires_grad()) return false;
  const auto* set = detail::active_useful();
  return set == nullptr || set->count(v.node()) > 0;
}

// Reverse-mode gradients of a scalar `loss` with respect to each Var in `wrt`
// (leaves or intermediates). Unreached inputs get zero gradients.
template <class T>
std::vector<Var<T>> grad(const Var<T>& loss, const std::vector<Var<T>>& wrt, bool create_graph = false) {
  if (!loss.defined() || loss.value().size() != 1)
    throw ShapeError("grad: loss must be a scalar, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  if (!loss.value().all_finite()) throw NumericError("grad: non-finite loss value");

  // Iterative post-order DFS over nodes that carry gradients.
  std::vector<Node<T>*> order;
  std::unordered_map<Node<T>*, bool> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  if (loss.requires_grad()) stack.emplace_back(loss.node(), 0);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next == 0) visited[n] = true;
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].node();
      if (p->requires_grad && !visited.count(p)) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Skip nodes from which no requested input is reachable.
  std::unordered_set<const void*> useful;
  for (const auto& w : wrt)
    if (w.defined()) useful.insert(w.node());
  for (Node<T>* n : order) {
    if (useful.count(n)) continue;
    for (const auto& p : n->parents)
      if (useful.count(p.node())) {
        useful.insert(n);
        break;
      }
  }

  struct UsefulScope {
    const std::unordered_set<const void*>* previous;
    ~UsefulScope() { detail::active_useful() = previous; }
  } scope{detail::active_useful()};
  detail::active_useful() = &useful;

  GradModeGuard mode(create_graph);
  std::unordered_map<Node<T>*, Var<T>> grads;
  if (loss.requires_grad()) grads[loss.node()] = Var<T>::constant(Tensor<T>(loss.shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    auto g = grads.find(n);
    if (g == grads.end() || !n->backward || !useful.count(n)) continue;
    const Var<T> upstream = g->second;
    auto parent_grads = n->backward(upstream);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      const Var<T>& pg = parent_grads[i];
      Node<T>* p = n->parents[i].node();
      if (!pg.defined() || !p->requires_grad) continue;
      auto [slot, inserted] = grads.try_emplace(p, pg);
      if (!inserted) slot->second = add(slot->second, pg);
    }
  }

  std::vector<Var<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto g = grads.find(w.node());
    if (g == grads.end())
      out.push_back(Var<T>::constant(Tensor<T>::zeros_like(w.value())));
    else
      out.push_back(g->second);
  }
  return out;
}

}  // namespace gmlabel::ad
