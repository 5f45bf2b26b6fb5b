#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "twoch/matrix.hpp"

namespace twoch::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl;
}

// Dense row-major tensor of doubles with an optional gradient buffer.
//
// Tensor is a shared handle: copies refer to the same storage, which is what
// lets the tape write gradients back into parameters owned elsewhere.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_matrix(const Matrix& m, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t numel() const;
    // Extents of a 2-D tensor.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    // True for tensors created by the user rather than by a recorded op.
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    // Gradient storage, allocated as zeros on first use.
    std::span<double> grad_buffer();
    void zero_grad();

    Matrix to_matrix() const;
    // Copy of the values with no gradient record.
    Tensor detach() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    friend class Tape;
    std::shared_ptr<detail::TensorImpl> impl_;
};

// One recorded operation. Inputs and output are handles into the forward
// graph; op-specific saved values live in the backward closure.
struct TapeNode {
    std::string_view kind;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(TapeNode&)> backward;
};

// Append-only record of differentiable ops for one forward pass.
class Tape {
public:
    // The calling thread's tape.
    static Tape& current();

    void record(std::string_view kind, std::vector<Tensor> inputs, Tensor& output,
                std::function<void(TapeNode&)> backward);

    // Reverse sweep from a scalar loss; clears the tape afterwards.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<TapeNode>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

private:
    std::vector<TapeNode> nodes_;
};

// Disables recording on the current thread while alive.
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

// Backpropagates through the current thread's tape.
void backward(const Tensor& loss);

}  // namespace twoch::ad
