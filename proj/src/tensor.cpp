#include "dconn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "dconn/rng.hpp"

namespace dconn {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

void check_finite(const char* op, const std::vector<double>& data) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            std::ostringstream os;
            os << op << ": non-finite value " << data[i] << " at flat index " << i;
            throw NonFiniteError(os.str());
        }
    }
}

}  // namespace

void TensorImpl::accumulate(std::size_t i, double g) { grad_buffer()[i] += g; }

std::vector<double>& TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    if (numel(shape) != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    check_finite("tensor", data);
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(shape, std::vector<double>(numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(shape, std::vector<double>(numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) throw ShapeError("axis out of range for " + shape_str(impl_->shape));
    return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() {
    if (impl_->node) throw GraphError("cannot mutate a non-leaf tensor in place");
    return impl_->data;
}

double Tensor::item() const {
    if (impl_->data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(impl_->shape));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& shape = impl_->shape;
    if (index.size() != shape.size()) throw ShapeError("index rank mismatch for " + shape_str(shape));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= shape[axis]) throw ShapeError("index out of range for " + shape_str(shape));
        flat = flat * shape[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (impl_->node) throw GraphError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::is_leaf() const { return impl_->node == nullptr; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::vector<double> Tensor::grad() const {
    if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

void Tensor::backward() const {
    if (impl_->data.size() != 1) {
        throw GraphError("backward() requires a scalar loss, got shape " + shape_str(impl_->shape));
    }
    if (impl_->released) throw GraphError("backward() called twice on the same graph; re-run the forward pass");
    if (!impl_->requires_grad) throw GraphError("backward() on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (t->node && next < t->node->inputs.size()) {
            TensorImpl* child = t->node->inputs[next++].get();
            if (child->requires_grad && !visited.count(child)) {
                if (child->released) throw GraphError("graph was already consumed by a previous backward()");
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }

    impl_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        if (!t->node) continue;
        if (!t->grad.empty()) t->node->backward(*t);
    }
    for (TensorImpl* t : order) {
        if (t->node) {
            t->node.reset();
            t->released = true;
        }
    }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward) {
    check_finite(op, data);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
        impl->requires_grad = true;
        auto node = std::make_shared<Node>();
        node->op = op;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.impl());
        node->backward = std::move(backward);
        impl->node = std::move(node);
    }
    return Tensor::from_impl(std::move(impl));
}

namespace {
thread_local BranchTrace* current_trace = nullptr;
}

BranchTrace::BranchTrace() : previous_(current_trace) { current_trace = this; }
BranchTrace::~BranchTrace() { current_trace = previous_; }
BranchTrace* BranchTrace::active() { return current_trace; }

void BranchTrace::note(std::uint64_t branch) {
    digest_ = mix64(digest_ ^ (branch + 0x9E3779B97F4A7C15ULL * ++decisions_));
}

}  // namespace dconn
