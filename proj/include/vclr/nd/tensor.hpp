#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vclr::nd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One vertex of the dynamic computation graph. Leaves own parameters or
// constants; interior nodes carry a backward closure that scatters their
// gradient into the parents.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first touched
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad();
};

class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    // In-place mutation is reserved for leaves (optimizer, EMA, perturbation).
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad();

    // New leaf holding a copy of the values, cut from any graph.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    bool is_leaf() const { return node_->is_leaf; }
    const std::shared_ptr<Node>& node() const { return node_; }

   private:
    std::shared_ptr<Node> node_;
};

// Scoped switch that disables graph recording on this thread.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

bool grad_enabled();

// While alive, records on this thread which side of its kink every element of
// a piecewise op (relu, abs, minimum, maximum) fell on. Finite-difference
// checks compare traces to tell a crossed kink from a wrong gradient.
class BranchTrace {
   public:
    BranchTrace();
    ~BranchTrace();
    BranchTrace(const BranchTrace&) = delete;
    BranchTrace& operator=(const BranchTrace&) = delete;

    void push(bool side) { sides_.push_back(side); }
    const std::vector<bool>& sides() const { return sides_; }

   private:
    std::vector<bool> sides_;
    BranchTrace* previous_;
};

BranchTrace* active_branch_trace();

// When on (the default), every op result is scanned and a NumericAbort naming
// the op is thrown on the first NaN/Inf.
void set_finite_checks(bool on);
bool finite_checks();
bool all_finite(const Tensor& t);

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
void backward(const Tensor& loss);

}  // namespace vclr::nd
