#include "laytext/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace laytext {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    const int64_t count = shape_numel(shape);
    if (count < 0) throw DimensionError("tensor shape with negative extent " + shape_str(shape));
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(count), fill);
    n->requires_grad = requires_grad;
    return Tensor::wrap(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor::wrap(std::move(n));
}

Tensor Tensor::scalar(double v) { return Tensor::from({}, {v}); }

double Tensor::grad_at(int64_t i) const {
    if (node_->grad.empty()) return 0.0;
    return node_->grad[static_cast<size_t>(i)];
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

Tensor Tensor::clone(bool requires_grad) const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->value = node_->value;
    n->requires_grad = requires_grad;
    return Tensor::wrap(std::move(n));
}

std::vector<double>& GradSink::get(const TensorNode* n) {
    auto it = grads_.find(n);
    if (it == grads_.end())
        it = grads_.emplace(n, std::vector<double>(n->value.size(), 0.0)).first;
    return it->second;
}

const std::vector<double>* GradSink::find(const TensorNode* n) const {
    auto it = grads_.find(n);
    return it == grads_.end() ? nullptr : &it->second;
}

namespace {

thread_local int g_no_grad_depth = 0;

// Post-order over parents; parent visit order is fixed by op construction,
// so gradient accumulation order is deterministic.
void topo_collect(TensorNode* root, std::vector<TensorNode*>& order) {
    std::unordered_map<const TensorNode*, bool> state;  // false=open, true=done
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    state[root] = false;
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !state.count(p)) {
                state[p] = false;
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

void run_backward(const Tensor& loss, GradSink& sink, bool accumulate_leaves) {
    if (!loss.defined()) throw ContractError("backward on undefined tensor");
    if (loss.numel() != 1)
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    TensorNode* root = loss.node().get();
    if (!root->requires_grad) return;  // nothing reachable

    sink.get(root)[0] = 1.0;

    std::vector<TensorNode*> order;
    topo_collect(root, order);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        const std::vector<double>* g = sink.find(n);
        if (!g) continue;  // no gradient flowed here
        if (n->backward) n->backward(*g, sink);
        if (accumulate_leaves && n->parents.empty() && !n->backward && n->requires_grad) {
            if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
            const std::vector<double>& src = *g;
            for (size_t i = 0; i < src.size(); ++i) n->grad[i] += src[i];
        }
    }
}

}  // namespace

void backward(const Tensor& loss) {
    GradSink sink;
    run_backward(loss, sink, true);
}

void backward_into(const Tensor& loss, GradSink& sink) { run_backward(loss, sink, false); }

void zero_grads(const std::vector<Tensor>& params) {
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

}  // namespace laytext
