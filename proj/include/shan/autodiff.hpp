#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "shan/error.hpp"
#include "shan/tensor.hpp"

namespace shan {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad; // empty until something flows into it
    bool requires_grad = false;
    const char* op = "leaf";
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.empty()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

/// Handle to a value in the autodiff graph. Cheap to copy (shared node).
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value) : node_(std::make_shared<Node<T>>()) { node_->value = std::move(value); }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var leaf(Tensor<T> value, bool requires_grad = true) {
        Var v(std::move(value));
        v.node_->requires_grad = requires_grad;
        return v;
    }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    std::size_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    const char* op() const { return node_->op; }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Ordered record of executed operations. Replaying it in reverse
/// propagates adjoints to every reachable leaf.
template <typename T>
class GradTape {
public:
    void push(std::shared_ptr<Node<T>> n) { nodes_.push_back(std::move(n)); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void replay_backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>& n = **it;
            if (!n.grad.empty() && n.backward) n.backward(n);
        }
    }

private:
    std::vector<std::shared_ptr<Node<T>>> nodes_;
};

namespace detail {

template <typename T>
GradTape<T>*& active_tape_slot() {
    thread_local GradTape<T>* tape = nullptr;
    return tape;
}

inline bool& check_finite_slot() {
    thread_local bool on = false;
    return on;
}

inline std::uint64_t*& flop_counter_slot() {
    thread_local std::uint64_t* counter = nullptr;
    return counter;
}

} // namespace detail

template <typename T>
GradTape<T>* active_tape() {
    return detail::active_tape_slot<T>();
}

/// Installs a tape for the current thread; ops record onto it while alive.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(GradTape<T>& tape) : prev_(detail::active_tape_slot<T>()) {
        detail::active_tape_slot<T>() = &tape;
    }
    ~TapeScope() { detail::active_tape_slot<T>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape<T>* prev_;
};

/// While alive, every op checks its output for NaN/Inf and throws NonFiniteError.
class FiniteCheckScope {
public:
    FiniteCheckScope() : prev_(detail::check_finite_slot()) { detail::check_finite_slot() = true; }
    ~FiniteCheckScope() { detail::check_finite_slot() = prev_; }
    FiniteCheckScope(const FiniteCheckScope&) = delete;
    FiniteCheckScope& operator=(const FiniteCheckScope&) = delete;

private:
    bool prev_;
};

/// Accumulates the analytic FLOP count of every op executed while alive.
class FlopScope {
public:
    FlopScope() : prev_(detail::flop_counter_slot()) { detail::flop_counter_slot() = &count_; }
    ~FlopScope() { detail::flop_counter_slot() = prev_; }
    FlopScope(const FlopScope&) = delete;
    FlopScope& operator=(const FlopScope&) = delete;
    std::uint64_t count() const { return count_; }

private:
    std::uint64_t count_ = 0;
    std::uint64_t* prev_;
};

inline void add_flops(std::uint64_t n) {
    if (auto* c = detail::flop_counter_slot()) *c += n;
}

/// Creates the output node of an op. The backward closure is kept only
/// when a tape is active and some input requires a gradient.
template <typename T>
Var<T> record(const char* op, Tensor<T> value, const std::vector<Var<T>>& inputs,
              std::function<void(Node<T>&)> backward) {
    if (detail::check_finite_slot() && !value.all_finite()) throw NonFiniteError(op);
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    GradTape<T>* tape = active_tape<T>();
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (tape && needs) {
        node->requires_grad = true;
        node->backward = std::move(backward);
        tape->push(node);
    }
    return Var<T>(std::move(node));
}

/// Reverse pass from a scalar loss recorded on the active tape. Gradients
/// accumulate into leaf grads; the tape is cleared afterwards.
template <typename T>
void backward(const Var<T>& loss) {
    GradTape<T>* tape = active_tape<T>();
    if (!tape) throw GradError("backward: no active tape");
    if (!loss.defined() || loss.numel() != 1)
        throw GradError("backward: loss must have exactly one element, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad()) {
        tape->clear();
        throw GradError("backward: loss was not recorded on the tape");
    }
    loss.node()->grad_buffer()[0] += T(1);
    tape->replay_backward();
    tape->clear();
}

/// Named trainable tensor. The grad has the same shape as the value once populated.
template <typename T>
struct Parameter {
    std::string name;
    Var<T> var;

    Tensor<T>& value() { return var.mutable_value(); }
    const Tensor<T>& value() const { return var.value(); }
    const Tensor<T>& grad() const { return var.grad(); }
};

/// All parameters of a model, keyed (and iterated) lexicographically by name.
template <typename T>
class ParameterSet {
public:
    Var<T> add(const std::string& name, Tensor<T> init) {
        if (params_.count(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
        auto v = Var<T>::leaf(std::move(init), true);
        params_.emplace(name, v);
        return v;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Var<T> get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::size_t size() const { return params_.size(); }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : params_) n += v.numel();
        return n;
    }

    std::size_t element_count(const std::string& prefix) const {
        std::size_t n = 0;
        for (const auto& [name, v] : params_)
            if (name.rfind(prefix, 0) == 0) n += v.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [_, v] : params_) v.mutable_grad() = Tensor<T>();
    }

    void fill(T value) {
        for (auto& [_, v] : params_) v.mutable_value().fill(value);
    }

    std::vector<Parameter<T>> list() const {
        std::vector<Parameter<T>> out;
        out.reserve(params_.size());
        for (const auto& [name, v] : params_) out.push_back({name, v});
        return out;
    }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Var<T>> params_;
};

} // namespace shan
