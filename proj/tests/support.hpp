#pragma once

// Straight-line scalar reference implementations used as oracles. They share
// no code with the library beyond reading parameter values.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "twoch/matrix.hpp"
#include "twoch/model.hpp"
#include "twoch/tensor.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid grid(const twoch::ad::Tensor& t) {
    Grid g(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) g[r][c] = t.at(r, c);
    return g;
}

inline Grid grid(const twoch::Matrix& m) {
    Grid g(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
    return g;
}

inline std::vector<double> vec(const twoch::ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Grid matmul(const Grid& a, const Grid& b) {
    const std::size_t m = a.size(), k = b.size(), n = b[0].size();
    Grid c(m, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < k; ++r) s += a[i][r] * b[r][j];
            c[i][j] = s;
        }
    return c;
}

inline Grid transpose(const Grid& a) {
    Grid t(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

inline std::vector<double> softmax_row(const std::vector<double>& s, const std::vector<bool>& allowed) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < s.size(); ++j)
        if (allowed[j]) mx = std::max(mx, s[j]);
    std::vector<double> e(s.size(), 0.0);
    double z = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j)
        if (allowed[j]) {
            e[j] = std::exp(s[j] - mx);
            z += e[j];
        }
    for (auto& v : e) v /= z;
    return e;
}

inline Grid layer_norm(const Grid& x, const std::vector<double>& gain, const std::vector<double>& bias, double eps) {
    Grid out = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
        const double d = static_cast<double>(x[r].size());
        double mean = 0.0;
        for (double v : x[r]) mean += v;
        mean /= d;
        double var = 0.0;
        for (double v : x[r]) var += (v - mean) * (v - mean);
        var /= d;
        for (std::size_t c = 0; c < x[r].size(); ++c) {
            out[r][c] = (x[r][c] - mean) / std::sqrt(var + eps) * gain[c] + bias[c];
        }
    }
    return out;
}

struct MhaOut {
    Grid output;
    std::vector<Grid> attention;
};

// Per head: softmax(Q K^T * scale + mask) V, concatenated, times W^O.
inline MhaOut mha(const Grid& e, const twoch::model::AttentionParams& p, bool causal, double scale) {
    const std::size_t tokens = e.size();
    const std::size_t heads = p.wq.size();
    MhaOut out;
    Grid concat(tokens);
    for (std::size_t h = 0; h < heads; ++h) {
        const Grid q = matmul(e, grid(p.wq[h]));
        const Grid k = matmul(e, grid(p.wk[h]));
        const Grid v = matmul(e, grid(p.wv[h]));
        const std::size_t f = q[0].size();
        Grid a(tokens);
        for (std::size_t i = 0; i < tokens; ++i) {
            std::vector<double> s(tokens);
            std::vector<bool> allowed(tokens);
            for (std::size_t j = 0; j < tokens; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < f; ++c) dot += q[i][c] * k[j][c];
                s[j] = dot * scale;
                allowed[j] = !causal || j <= i;
            }
            a[i] = softmax_row(s, allowed);
        }
        const Grid hv = matmul(a, v);
        for (std::size_t i = 0; i < tokens; ++i) concat[i].insert(concat[i].end(), hv[i].begin(), hv[i].end());
        out.attention.push_back(a);
    }
    out.output = matmul(concat, grid(p.wo));
    return out;
}

inline Grid add(Grid a, const Grid& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    return a;
}

inline Grid add_row(Grid a, const std::vector<double>& b) {
    for (auto& row : a)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    return a;
}

inline Grid positional(std::size_t length, std::size_t d) {
    Grid pe(length, std::vector<double>(d));
    for (std::size_t pos = 0; pos < length; ++pos)
        for (std::size_t i = 0; 2 * i < d; ++i) {
            const double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * i / static_cast<double>(d));
            pe[pos][2 * i] = std::sin(angle);
            if (2 * i + 1 < d) pe[pos][2 * i + 1] = std::cos(angle);
        }
    return pe;
}

// Inference-mode channel: encode, add positions, pre-norm blocks, final
// norm, decode.
inline Grid channel(const Grid& tokens, const twoch::model::ChannelParams& ch, const twoch::model::ModelConfig& c,
                    bool causal) {
    Grid h = add(add_row(matmul(tokens, grid(ch.enc_w)), vec(ch.enc_b)), positional(tokens.size(), c.d_model));
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.scale_by_head_dim ? c.head_dim() : c.d_model));
    for (const auto& b : ch.blocks) {
        const Grid n1 = layer_norm(h, vec(b.ln1_gain), vec(b.ln1_bias), c.ln_eps);
        h = add(h, mha(n1, b.attn, causal, scale).output);
        Grid f = add_row(matmul(layer_norm(h, vec(b.ln2_gain), vec(b.ln2_bias), c.ln_eps), grid(b.ffn_w1)),
                         vec(b.ffn_b1));
        for (auto& row : f)
            for (auto& v : row) v = v > 0.0 ? v : 0.0;
        h = add(h, add_row(matmul(f, grid(b.ffn_w2)), vec(b.ffn_b2)));
    }
    h = layer_norm(h, vec(ch.final_gain), vec(ch.final_bias), c.ln_eps);
    return add_row(matmul(h, grid(ch.dec_w)), vec(ch.dec_b));
}

inline Grid model_forward(const twoch::model::TwoChannelTransformer& m, const Grid& x) {
    const Grid t = channel(x, m.temporal(), m.config(), true);
    const Grid s = transpose(channel(transpose(x), m.spatial(), m.config(), false));
    return add(add(t, s), x);
}

inline double max_abs_diff(const Grid& a, const Grid& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
    return m;
}

// Dominant angular frequency (rad/s) of a real signal by a direct DFT scan.
inline double dominant_omega(const std::vector<double>& x, double fps, double lo, double hi, std::size_t steps) {
    double best = lo, best_power = -1.0;
    for (std::size_t s = 0; s <= steps; ++s) {
        const double w = lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(steps);
        double re = 0.0, im = 0.0;
        for (std::size_t n = 0; n < x.size(); ++n) {
            const double t = static_cast<double>(n) / fps;
            re += x[n] * std::cos(w * t);
            im -= x[n] * std::sin(w * t);
        }
        const double power = re * re + im * im;
        if (power > best_power) {
            best_power = power;
            best = w;
        }
    }
    return best;
}

}  // namespace oracle

namespace fixtures {

inline twoch::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                                   double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    twoch::Matrix m(rows, cols);
    for (auto& v : m.values()) v = u(rng);
    return m;
}

inline twoch::ad::Tensor random_tensor(twoch::ad::Shape shape, std::mt19937_64& rng, bool requires_grad = false) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(twoch::ad::shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return twoch::ad::Tensor(std::move(shape), std::move(v), requires_grad);
}

// D=8, H=2, L=1, P=6, N=4, T'=3.
inline twoch::model::ModelConfig tiny_config() {
    twoch::model::ModelConfig c;
    c.params = 6;
    c.prefix_len = 4;
    c.horizon = 3;
    c.d_model = 8;
    c.heads = 2;
    c.layers = 1;
    c.ffn_mult = 4;
    c.dropout = 0.0;
    return c;
}

// Randomizes both decoders, every bias and every gain so all parameters
// influence the output. Other weights keep their init values.
inline void randomize_all(twoch::model::TwoChannelTransformer& m, std::uint64_t seed, double scale = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    auto ends_with = [](const std::string& s, const std::string& tail) {
        return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
    };
    for (auto& nt : m.named_parameters()) {
        const auto& name = nt.name;
        if (ends_with(name, "gain")) {
            for (auto& v : nt.tensor.mutable_data()) v = 1.0 + 0.2 * n(rng);
        } else if (ends_with(name, "bias") || ends_with(name, ".b1") || ends_with(name, ".b2") ||
                   ends_with(name, "decoder.weight")) {
            for (auto& v : nt.tensor.mutable_data()) v = n(rng);
        }
    }
}

}  // namespace fixtures
