#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "laytext/errors.hpp"

namespace laytext {

// Shape {} is a rank-0 scalar holding one element.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class GradSink;

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // leaf accumulation buffer, lazily sized
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Pulls this node's gradient from the sink and pushes contributions to
    // the parents. Unset on leaves and on untracked results.
    std::function<void(const std::vector<double>& gout, GradSink& sink)> backward;
};

// Value-semantics handle over a shared node. Copies alias the same storage;
// values are treated as immutable once they feed an op (grad accumulation
// and optimizer updates are the only sanctioned mutations).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    double at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }

    // Gradient buffer, zero-sized until the first backward() reaches it.
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    double grad_at(int64_t i) const;
    void zero_grad();

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    double item() const;

    // Deep copy of values; result is a detached leaf.
    Tensor clone(bool requires_grad = false) const;

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

    static Tensor wrap(std::shared_ptr<TensorNode> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<TensorNode> node_;
};

// Per-backward gradient buffers keyed by node. Keeping gradients out of the
// nodes makes concurrent backward passes over shared parameters safe: each
// pass owns a sink and the caller merges them in a fixed order.
class GradSink {
public:
    std::vector<double>& get(const TensorNode* n);
    const std::vector<double>* find(const TensorNode* n) const;

private:
    std::unordered_map<const TensorNode*, std::vector<double>> grads_;
};

// Reverse pass from a scalar loss. backward() additionally accumulates into
// the .grad buffer of every reachable leaf that requires grad.
void backward(const Tensor& loss);
void backward_into(const Tensor& loss, GradSink& sink);

void zero_grads(const std::vector<Tensor>& params);

// Scoped switch that disables graph construction (evaluation / generation /
// finite-difference probes).
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace laytext
