#include "vclr/nd/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "vclr/error.hpp"

namespace vclr::nd {

namespace {
thread_local bool g_grad_enabled = true;
thread_local BranchTrace* g_trace = nullptr;
bool g_finite_checks = true;
}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::vector<double>& Node::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (nd::numel(shape) != data.size())
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                         std::to_string(nd::numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto count = nd::numel(shape);
    return from(std::move(shape), std::vector<double>(count, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::span<double> Tensor::mutable_data() {
    if (!node_->is_leaf) throw Error(ErrorKind::Shape, "mutable_data on a non-leaf tensor");
    return node_->data;
}

double Tensor::item() const {
    if (node_->data.size() != 1)
        throw ShapeError("item() on tensor of shape " + shape_str(node_->shape));
    return node_->data[0];
}

void Tensor::set_requires_grad(bool on) {
    if (!node_->is_leaf) throw Error(ErrorKind::Shape, "set_requires_grad on a non-leaf tensor");
    node_->requires_grad = on;
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

Tensor Tensor::detach() const { return from(node_->shape, node_->data, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

BranchTrace::BranchTrace() : previous_(g_trace) { g_trace = this; }
BranchTrace::~BranchTrace() { g_trace = previous_; }
BranchTrace* active_branch_trace() { return g_trace; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    Node* root = loss.node().get();
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (!n->is_leaf) n->grad.assign(n->data.size(), 0.0);
    root->ensure_grad()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->is_leaf && n->backward) n->backward(*n);
    }
}

}  // namespace vclr::nd
