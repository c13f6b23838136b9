#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dconn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
   public:
    using std::domain_error::domain_error;
};

class GraphError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// Backward record of one executed op. The closure reads the output's
// gradient and accumulates into the inputs it captured.
struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool released = false;  // graph behind this tensor was consumed by backward()
    std::shared_ptr<Node> node;

    void accumulate(std::size_t i, double g);
    std::vector<double>& grad_buffer();
};

// Dense row-major float64 tensor with define-by-run reverse-mode autodiff.
// Copies share storage (handle semantics); ops never mutate their inputs.
class Tensor {
   public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t size() const;

    std::span<const double> data() const;
    // Mutable access is for leaves only (optimizer steps, finite differences).
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;
    bool has_grad() const;
    // Zero-filled view when no gradient has been accumulated yet.
    std::vector<double> grad() const;
    void zero_grad();

    // Populates gradients of every requires_grad tensor reachable from this
    // scalar. The graph is released afterwards; a second call throws.
    void backward() const;

    // Detached copy: same values, no graph, no gradient.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

   private:
    std::shared_ptr<TensorImpl> impl_;
};

// Builds a result tensor for an op: validates finiteness, and records the
// backward closure when any input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward);

// While alive, collects the branch every piecewise op takes (ReLU side, abs
// sign, clamp region, max winner) into a digest. Two evaluations with equal
// digests ran on the same smooth piece of the function. One per thread.
class BranchTrace {
   public:
    BranchTrace();
    ~BranchTrace();
    BranchTrace(const BranchTrace&) = delete;
    BranchTrace& operator=(const BranchTrace&) = delete;

    std::uint64_t digest() const { return digest_; }
    std::size_t decisions() const { return decisions_; }

    static BranchTrace* active();
    void note(std::uint64_t branch);

   private:
    BranchTrace* previous_;
    std::uint64_t digest_ = 0x6A09E667F3BCC909ULL;
    std::size_t decisions_ = 0;
};

}  // namespace dconn
