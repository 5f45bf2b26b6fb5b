#include "twoch/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "twoch/errors.hpp"

namespace twoch::ad {

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool produced_by_op = false;
};

}  // namespace detail

namespace {

thread_local bool tl_grad_enabled = true;

detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
    if (!impl) throw Error("use of an undefined tensor");
    return *impl;
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    if (std::any_of(shape.begin(), shape.end(), [](std::size_t e) { return e == 0; })) {
        throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                             std::to_string(data.size()) + " values");
    }
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
    return Tensor({m.rows(), m.cols()}, m.values(), requires_grad);
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }
std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::size_t Tensor::rows() const {
    if (ndim() != 2) throw DimensionError("rows() on non-matrix tensor " + shape_string(shape()));
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (ndim() != 2) throw DimensionError("cols() on non-matrix tensor " + shape_string(shape()));
    return shape()[1];
}

std::span<const double> Tensor::data() const { return checked(impl_).data; }
std::span<double> Tensor::mutable_data() { return checked(impl_).data; }

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }
void Tensor::set_requires_grad(bool value) { checked(impl_).requires_grad = value; }
bool Tensor::is_leaf() const { return !checked(impl_).produced_by_op; }

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(impl_).grad; }

std::span<double> Tensor::grad_buffer() {
    auto& impl = checked(impl_);
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
    return impl.grad;
}

void Tensor::zero_grad() { checked(impl_).grad.clear(); }

Matrix Tensor::to_matrix() const { return Matrix(rows(), cols(), checked(impl_).data); }

Tensor Tensor::detach() const { return Tensor(shape(), checked(impl_).data, false); }

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(std::string_view kind, std::vector<Tensor> inputs, Tensor& output,
                  std::function<void(TapeNode&)> backward) {
    auto& impl = checked(output.impl_);
    impl.requires_grad = true;
    impl.produced_by_op = true;
    nodes_.push_back(TapeNode{kind, std::move(inputs), output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw DimensionError("backward() needs a scalar loss, got " +
                             (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw Error("backward() on a loss that is not on the tape");
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output.has_grad()) continue;
        it->backward(*it);
    }
    nodes_.clear();
}

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

bool grad_enabled() { return tl_grad_enabled; }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

}  // namespace twoch::ad
