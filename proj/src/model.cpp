#include "twoch/model.hpp"

#include <cmath>
#include <string>

#include "twoch/dataset.hpp"
#include "twoch/errors.hpp"
#include "twoch/ops.hpp"

namespace twoch::model {

namespace {

using namespace twoch::ad;

Tensor normal_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng);
    return Tensor({rows, cols}, std::move(v), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1.0, true); }

ChannelParams init_channel(const ModelConfig& c, std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng) {
    const std::size_t d = c.d_model;
    const std::size_t f = c.head_dim();
    const std::size_t hidden = c.ffn_mult * d;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    ChannelParams ch;
    ch.enc_w = normal_matrix(in_dim, d, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
    ch.enc_b = zeros_param({d});
    for (std::size_t l = 0; l < c.layers; ++l) {
        BlockParams b;
        b.ln1_gain = ones_param(d);
        b.ln1_bias = zeros_param({d});
        for (std::size_t h = 0; h < c.heads; ++h) {
            b.attn.wq.push_back(normal_matrix(d, f, inv_sqrt_d, rng));
            b.attn.wk.push_back(normal_matrix(d, f, inv_sqrt_d, rng));
            b.attn.wv.push_back(normal_matrix(d, f, inv_sqrt_d, rng));
        }
        b.attn.wo = normal_matrix(c.heads * f, d, 1.0 / std::sqrt(static_cast<double>(c.heads * f)), rng);
        b.ln2_gain = ones_param(d);
        b.ln2_bias = zeros_param({d});
        b.ffn_w1 = normal_matrix(d, hidden, inv_sqrt_d, rng);
        b.ffn_b1 = zeros_param({hidden});
        b.ffn_w2 = normal_matrix(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
        b.ffn_b2 = zeros_param({d});
        ch.blocks.push_back(std::move(b));
    }
    ch.final_gain = ones_param(d);
    ch.final_bias = zeros_param({d});
    ch.dec_w = zeros_param({d, out_dim});
    ch.dec_b = zeros_param({out_dim});
    return ch;
}

void collect(const ChannelParams& ch, const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".encoder.weight", ch.enc_w});
    out.push_back({prefix + ".encoder.bias", ch.enc_b});
    for (std::size_t l = 0; l < ch.blocks.size(); ++l) {
        const auto& b = ch.blocks[l];
        const std::string p = prefix + ".block" + std::to_string(l);
        out.push_back({p + ".ln1.gain", b.ln1_gain});
        out.push_back({p + ".ln1.bias", b.ln1_bias});
        for (std::size_t h = 0; h < b.attn.wq.size(); ++h) {
            const std::string hs = ".h" + std::to_string(h);
            out.push_back({p + ".attn.wq" + hs, b.attn.wq[h]});
            out.push_back({p + ".attn.wk" + hs, b.attn.wk[h]});
            out.push_back({p + ".attn.wv" + hs, b.attn.wv[h]});
        }
        out.push_back({p + ".attn.wo", b.attn.wo});
        out.push_back({p + ".ln2.gain", b.ln2_gain});
        out.push_back({p + ".ln2.bias", b.ln2_bias});
        out.push_back({p + ".ffn.w1", b.ffn_w1});
        out.push_back({p + ".ffn.b1", b.ffn_b1});
        out.push_back({p + ".ffn.w2", b.ffn_w2});
        out.push_back({p + ".ffn.b2", b.ffn_b2});
    }
    out.push_back({prefix + ".final_ln.gain", ch.final_gain});
    out.push_back({prefix + ".final_ln.bias", ch.final_bias});
    out.push_back({prefix + ".decoder.weight", ch.dec_w});
    out.push_back({prefix + ".decoder.bias", ch.dec_b});
}

Tensor deep_copy(const Tensor& t) {
    Tensor c = t.detach();
    c.set_requires_grad(t.requires_grad());
    return c;
}

ChannelParams copy_channel(const ChannelParams& ch) {
    ChannelParams out;
    out.enc_w = deep_copy(ch.enc_w);
    out.enc_b = deep_copy(ch.enc_b);
    for (const auto& b : ch.blocks) {
        BlockParams nb;
        nb.ln1_gain = deep_copy(b.ln1_gain);
        nb.ln1_bias = deep_copy(b.ln1_bias);
        for (std::size_t h = 0; h < b.attn.wq.size(); ++h) {
            nb.attn.wq.push_back(deep_copy(b.attn.wq[h]));
            nb.attn.wk.push_back(deep_copy(b.attn.wk[h]));
            nb.attn.wv.push_back(deep_copy(b.attn.wv[h]));
        }
        nb.attn.wo = deep_copy(b.attn.wo);
        nb.ln2_gain = deep_copy(b.ln2_gain);
        nb.ln2_bias = deep_copy(b.ln2_bias);
        nb.ffn_w1 = deep_copy(b.ffn_w1);
        nb.ffn_b1 = deep_copy(b.ffn_b1);
        nb.ffn_w2 = deep_copy(b.ffn_w2);
        nb.ffn_b2 = deep_copy(b.ffn_b2);
        out.blocks.push_back(std::move(nb));
    }
    out.final_gain = deep_copy(ch.final_gain);
    out.final_bias = deep_copy(ch.final_bias);
    out.dec_w = deep_copy(ch.dec_w);
    out.dec_b = deep_copy(ch.dec_b);
    return out;
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& what) {
    if (!t.defined() || t.shape() != shape) {
        throw ConfigError("parameter " + what + " has shape " + (t.defined() ? shape_string(t.shape()) : "undefined") +
                          ", expected " + shape_string(shape));
    }
}

void check_channel(const ModelConfig& c, const ChannelParams& ch, std::size_t in_dim, std::size_t out_dim,
                   const std::string& name) {
    const std::size_t d = c.d_model, f = c.head_dim(), hidden = c.ffn_mult * d;
    expect_shape(ch.enc_w, {in_dim, d}, name + ".encoder.weight");
    expect_shape(ch.enc_b, {d}, name + ".encoder.bias");
    if (ch.blocks.size() != c.layers) throw ConfigError(name + ": block count does not match config");
    for (const auto& b : ch.blocks) {
        expect_shape(b.ln1_gain, {d}, name + ".ln1.gain");
        expect_shape(b.ln1_bias, {d}, name + ".ln1.bias");
        if (b.attn.wq.size() != c.heads || b.attn.wk.size() != c.heads || b.attn.wv.size() != c.heads) {
            throw ConfigError(name + ": head count does not match config");
        }
        for (std::size_t h = 0; h < c.heads; ++h) {
            expect_shape(b.attn.wq[h], {d, f}, name + ".attn.wq");
            expect_shape(b.attn.wk[h], {d, f}, name + ".attn.wk");
            expect_shape(b.attn.wv[h], {d, f}, name + ".attn.wv");
        }
        expect_shape(b.attn.wo, {c.heads * f, d}, name + ".attn.wo");
        expect_shape(b.ln2_gain, {d}, name + ".ln2.gain");
        expect_shape(b.ln2_bias, {d}, name + ".ln2.bias");
        expect_shape(b.ffn_w1, {d, hidden}, name + ".ffn.w1");
        expect_shape(b.ffn_b1, {hidden}, name + ".ffn.b1");
        expect_shape(b.ffn_w2, {hidden, d}, name + ".ffn.w2");
        expect_shape(b.ffn_b2, {d}, name + ".ffn.b2");
    }
    expect_shape(ch.final_gain, {d}, name + ".final_ln.gain");
    expect_shape(ch.final_bias, {d}, name + ".final_ln.bias");
    expect_shape(ch.dec_w, {d, out_dim}, name + ".decoder.weight");
    expect_shape(ch.dec_b, {out_dim}, name + ".decoder.bias");
}

Tensor maybe_dropout(const Tensor& x, const ModelConfig& c, const ForwardOptions& options) {
    if (!options.training || c.dropout == 0.0) return x;
    if (!options.rng) throw Error("training forward with dropout needs an RNG");
    return dropout(x, c.dropout, *options.rng);
}

// tokens x in_dim -> tokens x out_dim through one attention stack.
Tensor channel_forward(const Tensor& tokens, const ChannelParams& ch, const ModelConfig& c, const Tensor& pe,
                       const std::optional<Tensor>& mask, const ForwardOptions& options) {
    Tensor h = add(add_rowwise(matmul(tokens, ch.enc_w), ch.enc_b), pe);
    const double scale_factor = c.attention_scale();
    for (const auto& b : ch.blocks) {
        auto attn = mha_forward(layer_norm(h, b.ln1_gain, b.ln1_bias, c.ln_eps), b.attn, mask, scale_factor);
        if (options.attention) options.attention->push_back(attn.attention);
        h = add(h, maybe_dropout(attn.output, c, options));
        Tensor f = layer_norm(h, b.ln2_gain, b.ln2_bias, c.ln_eps);
        f = relu(add_rowwise(matmul(f, b.ffn_w1), b.ffn_b1));
        f = add_rowwise(matmul(f, b.ffn_w2), b.ffn_b2);
        h = add(h, maybe_dropout(f, c, options));
    }
    h = layer_norm(h, ch.final_gain, ch.final_bias, c.ln_eps);
    return add_rowwise(matmul(h, ch.dec_w), ch.dec_b);
}

}  // namespace

double ModelConfig::attention_scale() const {
    const double width = scale_by_head_dim ? static_cast<double>(head_dim()) : static_cast<double>(d_model);
    return 1.0 / std::sqrt(width);
}

void ModelConfig::validate() const {
    if (params < 1 || prefix_len < 1 || horizon < 1) throw ConfigError("model: P, N and T' must be >= 1");
    if (d_model < 2 || d_model % 2 != 0) throw ConfigError("model: D must be even and >= 2");
    if (heads < 1 || d_model % heads != 0) {
        throw ConfigError("model: D=" + std::to_string(d_model) + " is not divisible by H=" + std::to_string(heads));
    }
    if (layers < 1) throw ConfigError("model: L must be >= 1");
    if (ffn_mult < 1) throw ConfigError("model: ffn_mult must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
    if (!(ln_eps > 0.0)) throw ConfigError("model: layer-norm eps must be positive");
}

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
    if (d_model % 2 != 0) throw ConfigError("positional_encoding: D must be even");
    std::vector<double> v(length * d_model);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; 2 * i < d_model; ++i) {
            const double angle = static_cast<double>(pos) /
                                 std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
            v[pos * d_model + 2 * i] = std::sin(angle);
            v[pos * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return Tensor({length, d_model}, std::move(v));
}

Tensor causal_mask(std::size_t length) {
    if (length < 1) throw ConfigError("causal_mask: length must be >= 1");
    std::vector<double> v(length * length, 0.0);
    for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t j = i + 1; j < length; ++j) v[i * length + j] = kMaskSentinel;
    }
    return Tensor({length, length}, std::move(v));
}

MhaResult mha_forward(const Tensor& embedding, const AttentionParams& params, const std::optional<Tensor>& mask,
                      double scale) {
    const std::size_t heads = params.wq.size();
    if (heads == 0 || params.wk.size() != heads || params.wv.size() != heads) {
        throw DimensionError("mha_forward: inconsistent head projections");
    }
    MhaResult result;
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor q = matmul(embedding, params.wq[h]);
        const Tensor k = matmul(embedding, params.wk[h]);
        const Tensor v = matmul(embedding, params.wv[h]);
        const Tensor a = softmax_masked(ad::scale(matmul(q, transpose(k)), scale), mask);
        head_outputs.push_back(matmul(a, v));
        result.attention.push_back(a);
    }
    result.output = matmul(concat_cols(head_outputs), params.wo);
    return result;
}

std::size_t param_count(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t per_block = 4 * d * d + 4 * d + 2 * c.ffn_mult * d * d + c.ffn_mult * d + d;
    auto channel = [&](std::size_t in, std::size_t out) {
        return (in * d + d) + c.layers * per_block + 2 * d + (d * out + out);
    };
    return channel(c.params, c.params) + channel(c.total_len(), c.total_len());
}

TwoChannelTransformer TwoChannelTransformer::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ChannelParams temporal = init_channel(config, config.params, config.params, rng);
    ChannelParams spatial = init_channel(config, config.total_len(), config.total_len(), rng);
    return TwoChannelTransformer(config, std::move(temporal), std::move(spatial));
}

TwoChannelTransformer::TwoChannelTransformer(ModelConfig config, ChannelParams temporal, ChannelParams spatial)
    : config_(config), temporal_(std::move(temporal)), spatial_(std::move(spatial)) {
    config_.validate();
    check_channel(config_, temporal_, config_.params, config_.params, "temporal");
    check_channel(config_, spatial_, config_.total_len(), config_.total_len(), "spatial");
    temporal_pe_ = positional_encoding(config_.total_len(), config_.d_model);
    spatial_pe_ = positional_encoding(config_.params, config_.d_model);
    mask_ = causal_mask(config_.total_len());
}

TwoChannelTransformer::TwoChannelTransformer(TwoChannelTransformer&& other) noexcept
    : config_(other.config_),
      temporal_(std::move(other.temporal_)),
      spatial_(std::move(other.spatial_)),
      temporal_pe_(std::move(other.temporal_pe_)),
      spatial_pe_(std::move(other.spatial_pe_)),
      mask_(std::move(other.mask_)),
      forward_calls_(other.forward_calls()) {}

TwoChannelTransformer& TwoChannelTransformer::operator=(TwoChannelTransformer&& other) noexcept {
    config_ = other.config_;
    temporal_ = std::move(other.temporal_);
    spatial_ = std::move(other.spatial_);
    temporal_pe_ = std::move(other.temporal_pe_);
    spatial_pe_ = std::move(other.spatial_pe_);
    mask_ = std::move(other.mask_);
    forward_calls_.store(other.forward_calls(), std::memory_order_relaxed);
    return *this;
}

TwoChannelTransformer TwoChannelTransformer::clone() const {
    return TwoChannelTransformer(config_, copy_channel(temporal_), copy_channel(spatial_));
}

std::vector<NamedTensor> TwoChannelTransformer::named_parameters() const {
    std::vector<NamedTensor> out;
    collect(temporal_, "temporal", out);
    collect(spatial_, "spatial", out);
    return out;
}

std::vector<Tensor> TwoChannelTransformer::parameters() const {
    std::vector<Tensor> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
}

std::size_t TwoChannelTransformer::param_count() const {
    std::size_t n = 0;
    for (const auto& nt : named_parameters()) n += nt.tensor.numel();
    return n;
}

void TwoChannelTransformer::check_input(const Tensor& x) const {
    if (x.ndim() != 2 || x.rows() != config_.total_len() || x.cols() != config_.params) {
        throw DimensionError("model input " + shape_string(x.shape()) + " does not match T x P = " +
                             std::to_string(config_.total_len()) + "x" + std::to_string(config_.params));
    }
}

Tensor TwoChannelTransformer::temporal_forward(const Tensor& x, const ForwardOptions& options) const {
    check_input(x);
    return channel_forward(x, temporal_, config_, temporal_pe_, mask_, options);
}

Tensor TwoChannelTransformer::spatial_forward(const Tensor& x, const ForwardOptions& options) const {
    check_input(x);
    return transpose(channel_forward(transpose(x), spatial_, config_, spatial_pe_, std::nullopt, options));
}

Tensor TwoChannelTransformer::forward(const Tensor& x, const ForwardOptions& options) const {
    forward_calls_.fetch_add(1, std::memory_order_relaxed);
    return add(add(temporal_forward(x, options), spatial_forward(x, options)), x);
}

Matrix TwoChannelTransformer::predict(const Matrix& padded) const {
    NoGradGuard guard;
    return forward(Tensor::from_matrix(padded)).to_matrix();
}

Matrix TwoChannelTransformer::forecast(const Matrix& prefix) const {
    if (prefix.rows() != config_.prefix_len) {
        throw DimensionError("forecast: prefix has " + std::to_string(prefix.rows()) + " frames, model expects N=" +
                             std::to_string(config_.prefix_len));
    }
    const Matrix padded = dataset::build_padded_input(prefix, config_.horizon);
    return predict(padded).slice_rows(config_.prefix_len, config_.total_len());
}

}  // namespace twoch::model
