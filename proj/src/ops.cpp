#include "twoch/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "twoch/errors.hpp"

namespace twoch::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap map(std::span<const double> s, std::size_t r, std::size_t c) {
    return ConstMap(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MutMap map(std::span<double> s, std::size_t r, std::size_t c) {
    return MutMap(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

void require_finite(const Tensor& t, const char* op) {
    const auto d = t.data();
    const Eigen::Map<const Eigen::ArrayXd> values(d.data(), static_cast<Eigen::Index>(d.size()));
    if (!values.allFinite()) throw NumericError(std::string(op) + " produced a non-finite value");
}

// Adds g into t's gradient when t participates in differentiation.
void accumulate(Tensor& t, std::span<const double> g) {
    if (!t.requires_grad()) return;
    auto buf = t.grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

const char* kind_name(ElementwiseKind kind) {
    switch (kind) {
        case ElementwiseKind::add: return "add";
        case ElementwiseKind::sub: return "sub";
        case ElementwiseKind::mul: return "mul";
        case ElementwiseKind::scale: return "scale";
        case ElementwiseKind::relu: return "relu";
    }
    return "elementwise";
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    std::vector<double> values(m * n);
    map(std::span<double>(values), m, n).noalias() = map(a.data(), m, k) * map(b.data(), k, n);
    Tensor out({m, n}, std::move(values));
    require_finite(out, "matmul");
    if (should_record({&a, &b})) {
        Tape::current().record("matmul", {a, b}, out, [m, k, n](TapeNode& node) {
            auto& lhs = node.inputs[0];
            auto& rhs = node.inputs[1];
            auto g = map(node.output.grad(), m, n);
            if (lhs.requires_grad()) {
                map(lhs.grad_buffer(), m, k).noalias() += g * map(rhs.data(), k, n).transpose();
            }
            if (rhs.requires_grad()) {
                map(rhs.grad_buffer(), k, n).noalias() += map(lhs.data(), m, k).transpose() * g;
            }
        });
    }
    return out;
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
    const char* name = kind_name(kind);
    if (kind == ElementwiseKind::scale || kind == ElementwiseKind::relu) {
        throw Error(std::string(name) + " takes a scalar operand");
    }
    require_same_shape(a, b, name);
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out_values(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        switch (kind) {
            case ElementwiseKind::add: out_values[i] = x[i] + y[i]; break;
            case ElementwiseKind::sub: out_values[i] = x[i] - y[i]; break;
            default: out_values[i] = x[i] * y[i]; break;
        }
    }
    Tensor out(a.shape(), std::move(out_values));
    require_finite(out, name);
    if (should_record({&a, &b})) {
        Tape::current().record(name, {a, b}, out, [kind](TapeNode& node) {
            auto g = node.output.grad();
            auto& lhs = node.inputs[0];
            auto& rhs = node.inputs[1];
            if (kind == ElementwiseKind::mul) {
                if (lhs.requires_grad()) {
                    auto buf = lhs.grad_buffer();
                    auto other = rhs.data();
                    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * other[i];
                }
                if (rhs.requires_grad()) {
                    auto buf = rhs.grad_buffer();
                    auto other = lhs.data();
                    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * other[i];
                }
                return;
            }
            accumulate(lhs, g);
            if (rhs.requires_grad()) {
                auto buf = rhs.grad_buffer();
                const double sign = kind == ElementwiseKind::sub ? -1.0 : 1.0;
                for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += sign * g[i];
            }
        });
    }
    return out;
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, double s) {
    const auto x = a.data();
    std::vector<double> out_values(x.size());
    switch (kind) {
        case ElementwiseKind::scale:
            for (std::size_t i = 0; i < x.size(); ++i) out_values[i] = s * x[i];
            break;
        case ElementwiseKind::relu:
            for (std::size_t i = 0; i < x.size(); ++i) out_values[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        case ElementwiseKind::add:
            for (std::size_t i = 0; i < x.size(); ++i) out_values[i] = x[i] + s;
            break;
        case ElementwiseKind::sub:
            for (std::size_t i = 0; i < x.size(); ++i) out_values[i] = x[i] - s;
            break;
        case ElementwiseKind::mul:
            for (std::size_t i = 0; i < x.size(); ++i) out_values[i] = x[i] * s;
            break;
    }
    Tensor out(a.shape(), std::move(out_values));
    const char* name = kind_name(kind);
    require_finite(out, name);
    if (should_record({&a})) {
        Tape::current().record(name, {a}, out, [kind, s](TapeNode& node) {
            auto& in = node.inputs[0];
            if (!in.requires_grad()) return;
            auto g = node.output.grad();
            auto buf = in.grad_buffer();
            auto x = in.data();
            for (std::size_t i = 0; i < buf.size(); ++i) {
                switch (kind) {
                    case ElementwiseKind::relu: buf[i] += x[i] > 0.0 ? g[i] : 0.0; break;
                    case ElementwiseKind::scale:
                    case ElementwiseKind::mul: buf[i] += s * g[i]; break;
                    default: buf[i] += g[i]; break;
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::mul, a, b); }
Tensor scale(const Tensor& a, double s) { return elementwise(ElementwiseKind::scale, a, s); }
Tensor relu(const Tensor& a) { return elementwise(ElementwiseKind::relu, a, 0.0); }

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
    require_matrix(x, "add_rowwise");
    const std::size_t m = x.rows(), n = x.cols();
    if (bias.numel() != n || bias.ndim() != 1) {
        throw DimensionError("add_rowwise: bias " + shape_string(bias.shape()) + " does not match rows of " +
                             shape_string(x.shape()));
    }
    Tensor out = Tensor::zeros({m, n});
    auto o = out.mutable_data();
    auto in = x.data();
    auto bv = bias.data();
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) o[r * n + c] = in[r * n + c] + bv[c];
    }
    require_finite(out, "add_rowwise");
    if (should_record({&x, &bias})) {
        Tape::current().record("add_rowwise", {x, bias}, out, [m, n](TapeNode& node) {
            auto g = node.output.grad();
            accumulate(node.inputs[0], g);
            auto& b = node.inputs[1];
            if (b.requires_grad()) {
                auto buf = b.grad_buffer();
                for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t c = 0; c < n; ++c) buf[c] += g[r * n + c];
                }
            }
        });
    }
    return out;
}

Tensor softmax_masked(const Tensor& scores, const std::optional<Tensor>& mask) {
    require_matrix(scores, "softmax_masked");
    const std::size_t m = scores.rows(), n = scores.cols();
    if (mask) require_same_shape(scores, *mask, "softmax_masked");
    Tensor out = Tensor::zeros({m, n});
    auto o = out.mutable_data();
    auto s = scores.data();
    for (std::size_t r = 0; r < m; ++r) {
        bool any_open = false;
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n; ++c) {
            double v = s[r * n + c];
            if (mask) {
                const double mv = mask->data()[r * n + c];
                if (mv != 0.0 && mv != kMaskSentinel) {
                    throw Error("softmax_masked: mask entries must be 0 or the sentinel");
                }
                any_open = any_open || mv == 0.0;
                v += mv;
            } else {
                any_open = true;
            }
            o[r * n + c] = v;
            row_max = std::max(row_max, v);
        }
        if (!any_open) throw Error("softmax_masked: row " + std::to_string(r) + " is fully masked");
        double total = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const double e = std::exp(o[r * n + c] - row_max);
            o[r * n + c] = e;
            total += e;
        }
        for (std::size_t c = 0; c < n; ++c) o[r * n + c] /= total;
    }
    require_finite(out, "softmax_masked");
    if (should_record({&scores})) {
        Tape::current().record("softmax_masked", {scores}, out, [m, n](TapeNode& node) {
            auto& in = node.inputs[0];
            if (!in.requires_grad()) return;
            auto g = node.output.grad();
            auto y = node.output.data();
            auto buf = in.grad_buffer();
            for (std::size_t r = 0; r < m; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
                for (std::size_t c = 0; c < n; ++c) buf[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (!(eps > 0.0)) throw Error("layer_norm: eps must be positive");
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                             shape_string(bias.shape()) + " do not match last extent of " +
                             shape_string(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> normalized(x.numel());
    std::vector<double> inv_std(rows);
    Tensor out = Tensor::zeros(x.shape());
    auto in = x.data();
    auto o = out.mutable_data();
    auto gv = gain.data();
    auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += row[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t c = 0; c < d; ++c) {
            const double xhat = (row[c] - mean) * inv;
            normalized[r * d + c] = xhat;
            o[r * d + c] = gv[c] * xhat + bv[c];
        }
    }
    require_finite(out, "layer_norm");
    if (should_record({&x, &gain, &bias})) {
        Tape::current().record(
            "layer_norm", {x, gain, bias}, out,
            [rows, d, normalized = std::move(normalized), inv_std = std::move(inv_std)](TapeNode& node) {
                auto g = node.output.grad();
                auto& xin = node.inputs[0];
                auto& gn = node.inputs[1];
                auto& bs = node.inputs[2];
                if (gn.requires_grad()) {
                    auto buf = gn.grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < d; ++c) buf[c] += g[r * d + c] * normalized[r * d + c];
                    }
                }
                if (bs.requires_grad()) {
                    auto buf = bs.grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < d; ++c) buf[c] += g[r * d + c];
                    }
                }
                if (xin.requires_grad()) {
                    auto buf = xin.grad_buffer();
                    auto gv = gn.data();
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                        double sum_dx = 0.0, sum_dx_xhat = 0.0;
                        for (std::size_t c = 0; c < d; ++c) {
                            const double dxhat = g[r * d + c] * gv[c];
                            sum_dx += dxhat;
                            sum_dx_xhat += dxhat * normalized[r * d + c];
                        }
                        for (std::size_t c = 0; c < d; ++c) {
                            const double dxhat = g[r * d + c] * gv[c];
                            buf[r * d + c] += inv_std[r] * (dxhat - inv_d * sum_dx -
                                                            normalized[r * d + c] * inv_d * sum_dx_xhat);
                        }
                    }
                }
            });
    }
    return out;
}

Tensor transpose(const Tensor& x) {
    require_matrix(x, "transpose");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({n, m});
    map(out.mutable_data(), n, m) = map(x.data(), m, n).transpose();
    if (should_record({&x})) {
        Tape::current().record("transpose", {x}, out, [m, n](TapeNode& node) {
            auto& in = node.inputs[0];
            if (!in.requires_grad()) return;
            map(in.grad_buffer(), m, n) += map(node.output.grad(), n, m).transpose();
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_string(x.shape()) + " cannot become " + shape_string(shape));
    }
    Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    if (should_record({&x})) {
        Tape::current().record("reshape", {x}, out,
                               [](TapeNode& node) { accumulate(node.inputs[0], node.output.grad()); });
    }
    return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t m = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row counts differ, " + shape_string(parts.front().shape()) +
                                 " vs " + shape_string(p.shape()));
        }
        widths.push_back(p.cols());
        total += p.cols();
    }
    Tensor out = Tensor::zeros({m, total});
    auto o = out.mutable_data();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto src = parts[i].data();
        for (std::size_t r = 0; r < m; ++r) {
            std::copy_n(src.data() + r * widths[i], widths[i], o.data() + r * total + offset);
        }
        offset += widths[i];
    }
    bool record = false;
    if (grad_enabled()) {
        record = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
    }
    if (record) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        Tape::current().record("concat_cols", std::move(inputs), out, [m, total, widths](TapeNode& node) {
            auto g = node.output.grad();
            std::size_t off = 0;
            for (std::size_t i = 0; i < node.inputs.size(); ++i) {
                auto& in = node.inputs[i];
                if (in.requires_grad()) {
                    auto buf = in.grad_buffer();
                    for (std::size_t r = 0; r < m; ++r) {
                        for (std::size_t c = 0; c < widths[i]; ++c) buf[r * widths[i] + c] += g[r * total + off + c];
                    }
                }
                off += widths[i];
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_rows");
    const std::size_t n = x.cols();
    if (begin >= end || end > x.rows()) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") invalid for " + shape_string(x.shape()));
    }
    auto src = x.data();
    Tensor out({end - begin, n}, std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(begin * n),
                                                     src.begin() + static_cast<std::ptrdiff_t>(end * n)));
    if (should_record({&x})) {
        Tape::current().record("slice_rows", {x}, out, [begin, n](TapeNode& node) {
            auto& in = node.inputs[0];
            if (!in.requires_grad()) return;
            auto g = node.output.grad();
            auto buf = in.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) buf[begin * n + i] += g[i];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    auto v = x.data();
    Tensor out = Tensor::scalar(std::accumulate(v.begin(), v.end(), 0.0));
    require_finite(out, "sum");
    if (should_record({&x})) {
        Tape::current().record("sum", {x}, out, [](TapeNode& node) {
            auto& in = node.inputs[0];
            if (!in.requires_grad()) return;
            const double g = node.output.grad()[0];
            for (auto& b : in.grad_buffer()) b += g;
        });
    }
    return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    auto x = a.data();
    auto y = b.data();
    const double count = static_cast<double>(x.size());
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += (x[i] - y[i]) * (x[i] - y[i]);
    Tensor out = Tensor::scalar(total / count);
    require_finite(out, "mse");
    if (should_record({&a, &b})) {
        Tape::current().record("mse", {a, b}, out, [count](TapeNode& node) {
            const double g = node.output.grad()[0] * 2.0 / count;
            auto& lhs = node.inputs[0];
            auto& rhs = node.inputs[1];
            auto x = lhs.data();
            auto y = rhs.data();
            if (lhs.requires_grad()) {
                auto buf = lhs.grad_buffer();
                for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g * (x[i] - y[i]);
            }
            if (rhs.requires_grad()) {
                auto buf = rhs.grad_buffer();
                for (std::size_t i = 0; i < buf.size(); ++i) buf[i] -= g * (x[i] - y[i]);
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw Error("dropout: probability must be in [0, 1)");
    if (p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::bernoulli_distribution keep(1.0 - p);
    std::vector<double> factors(x.numel());
    for (auto& f : factors) f = keep(rng) ? keep_scale : 0.0;
    auto in = x.data();
    std::vector<double> values(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) values[i] = in[i] * factors[i];
    Tensor out(x.shape(), std::move(values));
    if (should_record({&x})) {
        Tape::current().record("dropout", {x}, out, [factors = std::move(factors)](TapeNode& node) {
            auto& in = node.inputs[0];
            if (!in.requires_grad()) return;
            auto g = node.output.grad();
            auto buf = in.grad_buffer();
            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * factors[i];
        });
    }
    return out;
}

}  // namespace twoch::ad
