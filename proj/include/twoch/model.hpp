#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "twoch/matrix.hpp"
#include "twoch/tensor.hpp"

namespace twoch::model {

using ad::Tensor;

struct ModelConfig {
    std::size_t params = 99;     // P
    std::size_t prefix_len = 10;  // N
    std::size_t horizon = 25;     // T'
    std::size_t d_model = 160;    // D
    std::size_t heads = 8;        // H
    std::size_t layers = 4;       // L, per channel
    std::size_t ffn_mult = 4;
    double dropout = 0.1;
    // Attention logits are divided by sqrt(D) unless this is set, in which
    // case the per-head width sqrt(D / H) is used.
    bool scale_by_head_dim = false;
    double ln_eps = 1e-5;

    std::size_t total_len() const { return prefix_len + horizon; }
    std::size_t head_dim() const { return d_model / heads; }
    double attention_scale() const;
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Per-head projections W^(Q,h), W^(K,h), W^(V,h) (D x F each) and the shared
// output projection W^(O) (H*F x D). No biases.
struct AttentionParams {
    std::vector<Tensor> wq;
    std::vector<Tensor> wk;
    std::vector<Tensor> wv;
    Tensor wo;
};

// Pre-norm block: h += MHA(LN1(h)); h += FFN(LN2(h)).
struct BlockParams {
    Tensor ln1_gain, ln1_bias;
    AttentionParams attn;
    Tensor ln2_gain, ln2_bias;
    Tensor ffn_w1, ffn_b1;  // D x ffn*D, ffn*D
    Tensor ffn_w2, ffn_b2;  // ffn*D x D, D
};

// Temporal: tokens are frames (in = out = P). Spatial: tokens are parameters
// (in = out = T).
struct ChannelParams {
    Tensor enc_w, enc_b;
    std::vector<BlockParams> blocks;
    Tensor final_gain, final_bias;
    Tensor dec_w, dec_b;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct ForwardOptions {
    bool training = false;
    std::mt19937_64* rng = nullptr;  // required when training with dropout
    // When set, receives every block's attention matrices, [block][head].
    std::vector<std::vector<Tensor>>* attention = nullptr;
};

struct MhaResult {
    Tensor output;                  // tokens x D
    std::vector<Tensor> attention;  // H matrices, tokens x tokens
};

// pe[pos, 2i] = sin(pos / 10000^(2i/D)), pe[pos, 2i+1] = cos(same).
Tensor positional_encoding(std::size_t length, std::size_t d_model);

// 0 on and below the diagonal, kMaskSentinel above it.
Tensor causal_mask(std::size_t length);

MhaResult mha_forward(const Tensor& embedding, const AttentionParams& params, const std::optional<Tensor>& mask,
                      double scale);

// Closed-form learnable scalar count:
//   channel(in, out) = (in*D + D) + L*per_block + 2D + (D*out + out)
//   per_block        = 4*D^2 + 4D + 2*ffn*D^2 + ffn*D + D
//   total            = channel(P, P) + channel(T, T)
std::size_t param_count(const ModelConfig& config);

class TwoChannelTransformer {
public:
    // Seeded init: weights ~ N(0, 1/fan_in), biases 0, layer-norm gains 1,
    // both decoders exactly 0 so the fresh model is the zero-velocity predictor.
    static TwoChannelTransformer init(const ModelConfig& config, std::uint64_t seed);

    // Builds a model around existing parameters (checkpoint loading).
    TwoChannelTransformer(ModelConfig config, ChannelParams temporal, ChannelParams spatial);

    TwoChannelTransformer(TwoChannelTransformer&& other) noexcept;
    TwoChannelTransformer& operator=(TwoChannelTransformer&& other) noexcept;
    TwoChannelTransformer(const TwoChannelTransformer&) = delete;
    TwoChannelTransformer& operator=(const TwoChannelTransformer&) = delete;

    // Deep copy; the clone shares no storage with this model.
    TwoChannelTransformer clone() const;

    const ModelConfig& config() const { return config_; }
    ChannelParams& temporal() { return temporal_; }
    ChannelParams& spatial() { return spatial_; }
    const ChannelParams& temporal() const { return temporal_; }
    const ChannelParams& spatial() const { return spatial_; }

    std::vector<NamedTensor> named_parameters() const;
    std::vector<Tensor> parameters() const;
    std::size_t param_count() const;

    // T x P -> T x P. Output row t depends on input rows <= t only.
    Tensor temporal_forward(const Tensor& x, const ForwardOptions& options = {}) const;
    // T x P -> T x P, attention over the P parameter tokens.
    Tensor spatial_forward(const Tensor& x, const ForwardOptions& options = {}) const;
    // X_hat = X_hat_T + X_hat_S + X over the full padded sequence.
    Tensor forward(const Tensor& x, const ForwardOptions& options = {}) const;

    // Inference on a padded T x P input: no tape, no dropout.
    Matrix predict(const Matrix& padded) const;
    // Pads an N x P prefix and returns the T' forecast rows in one pass.
    Matrix forecast(const Matrix& prefix) const;

    // Number of full-model forward passes since construction.
    std::size_t forward_calls() const { return forward_calls_.load(std::memory_order_relaxed); }
    void reset_forward_calls() { forward_calls_.store(0, std::memory_order_relaxed); }

private:
    void check_input(const Tensor& x) const;

    ModelConfig config_;
    ChannelParams temporal_;
    ChannelParams spatial_;
    Tensor temporal_pe_;
    Tensor spatial_pe_;
    Tensor mask_;
    mutable std::atomic<std::size_t> forward_calls_{0};
};

}  // namespace twoch::model
