#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support.hpp"
#include "twoch/checkpoint.hpp"
#include "twoch/dataset.hpp"
#include "twoch/errors.hpp"
#include "twoch/grad_check.hpp"
#include "twoch/model.hpp"
#include "twoch/ops.hpp"

using namespace twoch;
using namespace twoch::model;
using ad::Tensor;

namespace {

Tensor random_padded(const ModelConfig& c, std::mt19937_64& rng) {
    const Matrix prefix = fixtures::random_matrix(c.prefix_len, c.params, rng);
    return Tensor::from_matrix(dataset::build_padded_input(prefix, c.horizon));
}

std::size_t hand_count(const ModelConfig& c) {
    const std::size_t d = c.d_model, f = c.head_dim(), h = c.heads, hid = c.ffn_mult * d;
    auto channel = [&](std::size_t io) {
        std::size_t n = io * d + d;  // encoder
        for (std::size_t l = 0; l < c.layers; ++l) {
            n += 2 * d;                  // ln1
            n += 3 * h * d * f;          // wq, wk, wv per head
            n += h * f * d;              // wo
            n += 2 * d;                  // ln2
            n += d * hid + hid;          // ffn layer 1
            n += hid * d + d;            // ffn layer 2
        }
        n += 2 * d;         // final norm
        n += d * io + io;   // decoder
        return n;
    };
    return channel(c.params) + channel(c.total_len());
}

}  // namespace

TEST_CASE("positional_encoding") {
    const Tensor pe = positional_encoding(6, 8);
    for (std::size_t c = 0; c < 8; ++c) CHECK(pe.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
    CHECK(pe.at(1, 0) == doctest::Approx(0.841471).epsilon(1e-6));
    CHECK(pe.at(1, 0) == std::sin(1.0));
    for (double v : pe.data()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(oracle::max_abs_diff(oracle::grid(pe), oracle::positional(6, 8)) <= 1e-15);
    CHECK_THROWS_AS(positional_encoding(4, 7), ConfigError);
}

TEST_CASE("causal_mask") {
    CHECK(oracle::vec(causal_mask(1)) == std::vector<double>{0.0});
    CHECK(oracle::vec(causal_mask(2)) == std::vector<double>{0.0, ad::kMaskSentinel, 0.0, 0.0});
    const Tensor m = causal_mask(35);
    for (std::size_t i = 0; i < 35; ++i)
        for (std::size_t j = 0; j < 35; ++j) CHECK(m.at(i, j) == (j <= i ? 0.0 : ad::kMaskSentinel));
}

TEST_CASE("mha_forward") {
    std::mt19937_64 rng(3);
    auto make = [&](std::size_t d, std::size_t h) {
        AttentionParams p;
        for (std::size_t i = 0; i < h; ++i) {
            p.wq.push_back(fixtures::random_tensor({d, d / h}, rng));
            p.wk.push_back(fixtures::random_tensor({d, d / h}, rng));
            p.wv.push_back(fixtures::random_tensor({d, d / h}, rng));
        }
        p.wo = fixtures::random_tensor({d, d}, rng);
        return p;
    };
    SUBCASE("single token attends to itself") {
        const auto p = make(4, 2);
        const Tensor e = fixtures::random_tensor({1, 4}, rng);
        const auto r = mha_forward(e, p, std::nullopt, 0.5);
        for (const auto& a : r.attention) CHECK(a.item() == 1.0);
        const Tensor expect =
            ad::matmul(ad::concat_cols(std::vector<Tensor>{ad::matmul(e, p.wv[0]), ad::matmul(e, p.wv[1])}), p.wo);
        CHECK(oracle::max_abs_diff(oracle::grid(r.output), oracle::grid(expect)) <= 1e-15);
    }
    SUBCASE("causal mask zeroes the future") {
        const auto p = make(4, 2);
        const auto r = mha_forward(fixtures::random_tensor({2, 4}, rng), p, causal_mask(2), 0.5);
        for (const auto& a : r.attention) CHECK(a.at(0, 1) == 0.0);
    }
    SUBCASE("scalar oracle, three tokens") {
        for (bool causal : {false, true}) {
            const auto p = make(4, 2);
            const Tensor e = fixtures::random_tensor({3, 4}, rng);
            const double scale = 1.0 / std::sqrt(4.0);
            const auto r = mha_forward(e, p, causal ? std::optional<Tensor>(causal_mask(3)) : std::nullopt, scale);
            const auto expect = oracle::mha(oracle::grid(e), p, causal, scale);
            CHECK(oracle::max_abs_diff(oracle::grid(r.output), expect.output) <= 1e-12);
            for (std::size_t h = 0; h < 2; ++h) {
                CHECK(oracle::max_abs_diff(oracle::grid(r.attention[h]), expect.attention[h]) <= 1e-12);
            }
        }
    }
    SUBCASE("inconsistent heads") {
        auto p = make(4, 2);
        p.wk.pop_back();
        CHECK_THROWS_AS(mha_forward(fixtures::random_tensor({3, 4}, rng), p, std::nullopt, 0.5), DimensionError);
    }
}

TEST_CASE("config validation and scaling") {
    ModelConfig c;
    CHECK(c.attention_scale() == 1.0 / std::sqrt(160.0));
    c.scale_by_head_dim = true;
    CHECK(c.attention_scale() == 1.0 / std::sqrt(20.0));
    ModelConfig bad;
    bad.heads = 7;
    CHECK_THROWS_AS(TwoChannelTransformer::init(bad, 0), ConfigError);
    bad = {};
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.layers = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("param_count") {
    ModelConfig c = fixtures::tiny_config();
    c.horizon = 3;  // T = 7
    CHECK(param_count(c) == hand_count(c));
    CHECK(TwoChannelTransformer::init(c, 1).param_count() == param_count(c));

    const ModelConfig def;
    CHECK(param_count(def) == hand_count(def));
    CHECK(param_count(def) >= 2'100'000);
    CHECK(param_count(def) <= 3'100'000);

    ModelConfig twice = def;
    twice.layers = 2 * def.layers;
    const std::size_t d = def.d_model;
    const std::size_t block = 4 * d * d + 4 * d + 2 * def.ffn_mult * d * d + def.ffn_mult * d + d;
    CHECK(param_count(twice) - param_count(def) == def.layers * block * 2);
}

TEST_CASE("init") {
    const ModelConfig c = fixtures::tiny_config();
    const auto a = TwoChannelTransformer::init(c, 5);
    const auto b = TwoChannelTransformer::init(c, 5);
    const auto other = TwoChannelTransformer::init(c, 6);
    const auto pa = a.named_parameters(), pb = b.named_parameters(), po = other.named_parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(oracle::vec(pa[i].tensor) == oracle::vec(pb[i].tensor));
        any_diff |= oracle::vec(pa[i].tensor) != oracle::vec(po[i].tensor);
    }
    CHECK(any_diff);

    for (const auto& nt : pa) {
        if (nt.name.find("decoder") != std::string::npos) {
            for (double v : nt.tensor.data()) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("init weight scale follows fan-in") {
    const auto m = TwoChannelTransformer::init(ModelConfig{}, 11);
    for (const auto& nt : m.named_parameters()) {
        if (nt.tensor.ndim() != 2 || nt.name.find("decoder") != std::string::npos) continue;
        const double fan_in = static_cast<double>(nt.tensor.rows());
        double s2 = 0.0;
        for (double v : nt.tensor.data()) s2 += v * v;
        const double sd = std::sqrt(s2 / static_cast<double>(nt.tensor.numel()));
        CAPTURE(nt.name);
        CHECK(std::abs(sd - 1.0 / std::sqrt(fan_in)) <= 0.2 / std::sqrt(fan_in));
    }
}

TEST_CASE("forward") {
    const ModelConfig c = fixtures::tiny_config();
    std::mt19937_64 rng(12);

    SUBCASE("fresh model is the zero-velocity predictor") {
        const auto m = TwoChannelTransformer::init(c, 1);
        const Tensor x = random_padded(c, rng);
        CHECK(oracle::vec(m.forward(x)) == oracle::vec(x));
        for (double v : m.temporal_forward(x).data()) CHECK(v == 0.0);
        for (double v : m.spatial_forward(x).data()) CHECK(v == 0.0);
    }
    SUBCASE("default shapes") {
        const auto m = TwoChannelTransformer::init(ModelConfig{}, 2);
        const Tensor x = random_padded(m.config(), rng);
        std::vector<std::vector<Tensor>> attn;
        ForwardOptions opts;
        opts.attention = &attn;
        const Tensor y = m.spatial_forward(x, opts);
        CHECK(y.shape() == ad::Shape{35, 99});
        REQUIRE(attn.size() == 4);
        CHECK(attn[0][0].shape() == ad::Shape{99, 99});
        attn.clear();
        CHECK(m.temporal_forward(x, opts).shape() == ad::Shape{35, 99});
        CHECK(attn[0][0].shape() == ad::Shape{35, 35});
        CHECK(m.forward(x).shape() == ad::Shape{35, 99});
        CHECK_THROWS_AS(m.forward(Tensor::zeros({34, 99})), DimensionError);
    }
    SUBCASE("matches the scalar reimplementation") {
        for (bool head_scale : {false, true}) {
            ModelConfig cc = c;
            cc.layers = 2;
            cc.scale_by_head_dim = head_scale;
            auto m = TwoChannelTransformer::init(cc, 3);
            fixtures::randomize_all(m, 4);
            const Tensor x = random_padded(cc, rng);
            const auto g = oracle::grid(x);
            CHECK(oracle::max_abs_diff(oracle::grid(m.temporal_forward(x)), oracle::channel(g, m.temporal(), cc, true)) <=
                  1e-12);
            CHECK(oracle::max_abs_diff(oracle::grid(m.spatial_forward(x)),
                                       oracle::transpose(oracle::channel(oracle::transpose(g), m.spatial(), cc,
                                                                         false))) <= 1e-12);
            CHECK(oracle::max_abs_diff(oracle::grid(m.forward(x)), oracle::model_forward(m, g)) <= 1e-12);
        }
    }
    SUBCASE("temporal channel is causal to the bit") {
        auto m = TwoChannelTransformer::init(c, 5);
        fixtures::randomize_all(m, 6);
        const Tensor x = random_padded(c, rng);
        const Tensor base = m.temporal_forward(x);
        for (std::size_t t = 0; t + 1 < c.total_len(); ++t) {
            Tensor y = x.detach();
            for (std::size_t r = t + 1; r < c.total_len(); ++r)
                for (std::size_t p = 0; p < c.params; ++p) y.mutable_data()[r * c.params + p] += 0.37 * (r + p + 1);
            const Tensor out = m.temporal_forward(y);
            for (std::size_t r = 0; r <= t; ++r)
                for (std::size_t p = 0; p < c.params; ++p) CHECK(out.at(r, p) == base.at(r, p));
        }
    }
    SUBCASE("attention rows are stochastic") {
        auto m = TwoChannelTransformer::init(c, 7);
        std::vector<std::vector<Tensor>> attn;
        ForwardOptions opts;
        opts.attention = &attn;
        (void)m.temporal_forward(random_padded(c, rng), opts);
        for (const auto& block : attn)
            for (const auto& a : block)
                for (std::size_t i = 0; i < a.rows(); ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < a.cols(); ++j) {
                        s += a.at(i, j);
                        if (j > i) CHECK(a.at(i, j) == 0.0);
                    }
                    CHECK(std::abs(s - 1.0) <= 1e-9);
                }
    }
    SUBCASE("channels add at the output") {
        auto m = TwoChannelTransformer::init(c, 8);
        fixtures::randomize_all(m, 9);
        const Tensor x = random_padded(c, rng);
        const Tensor full = m.forward(x);
        const Tensor spatial = m.spatial_forward(x);
        const Tensor temporal = m.temporal_forward(x);
        for (auto& v : m.spatial().dec_w.mutable_data()) v = 0.0;
        for (auto& v : m.spatial().dec_b.mutable_data()) v = 0.0;
        const Tensor no_spatial = m.forward(x);
        CHECK(oracle::vec(no_spatial) == oracle::vec(ad::add(temporal, x)));
        for (std::size_t i = 0; i < full.numel(); ++i) {
            CHECK(std::abs((full.data()[i] - no_spatial.data()[i]) - spatial.data()[i]) <= 1e-12);
        }
    }
    SUBCASE("finite across seeds") {
        for (std::uint64_t s = 0; s < 100; ++s) {
            auto m = TwoChannelTransformer::init(c, s);
            fixtures::randomize_all(m, s + 1000);
            for (double v : m.forward(random_padded(c, rng)).data()) REQUIRE(std::isfinite(v));
        }
    }
    SUBCASE("dropout only in training mode") {
        ModelConfig cd = c;
        cd.dropout = 0.5;
        auto m = TwoChannelTransformer::init(cd, 10);
        fixtures::randomize_all(m, 11);
        const Tensor x = random_padded(cd, rng);
        CHECK(oracle::vec(m.forward(x)) == oracle::vec(m.forward(x)));
        std::mt19937_64 drng(1);
        ForwardOptions train;
        train.training = true;
        train.rng = &drng;
        CHECK(oracle::vec(m.forward(x, train)) != oracle::vec(m.forward(x)));
        ForwardOptions no_rng;
        no_rng.training = true;
        CHECK_THROWS_AS(m.forward(x, no_rng), Error);
    }
}

TEST_CASE("one forward pass per forecast") {
    const ModelConfig c;
    const auto m = TwoChannelTransformer::init(c, 1);
    std::mt19937_64 rng(2);
    const Matrix prefix = fixtures::random_matrix(10, 99, rng);
    const std::size_t before = m.forward_calls();
    const Matrix future = m.forecast(prefix);
    CHECK(m.forward_calls() - before == 1);
    REQUIRE(future.rows() == 25);
    for (std::size_t r = 0; r < 25; ++r) CHECK(future.slice_rows(r, r + 1) == prefix.slice_rows(9, 10));
    CHECK_THROWS_AS(m.forecast(prefix.slice_rows(0, 9)), DimensionError);
}

TEST_CASE("full-model gradient check, tiny config") {
    const ModelConfig c = fixtures::tiny_config();
    auto m = TwoChannelTransformer::init(c, 21);
    fixtures::randomize_all(m, 22);
    std::mt19937_64 rng(23);
    const Tensor x = random_padded(c, rng);
    const Tensor target = Tensor::from_matrix(fixtures::random_matrix(c.horizon, c.params, rng));
    auto params = m.parameters();
    auto loss = [&] { return ad::mse(ad::slice_rows(m.forward(x), c.prefix_len, c.total_len()), target); };
    const auto report = ad::grad_check_params(loss, params, 1e-5, 1e-4, 150, 24);
    CHECK(report.coordinates.size() == 150);
    CHECK(report.nonfinite.empty());
    CHECK(report.max_error < 1e-4);
}

TEST_CASE("clone shares no storage") {
    auto m = TwoChannelTransformer::init(fixtures::tiny_config(), 1);
    const auto copy = m.clone();
    const auto a = m.parameters(), b = copy.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK_FALSE(a[i].same_storage(b[i]));
        CHECK(oracle::vec(a[i]) == oracle::vec(b[i]));
    }
    m.temporal().enc_w.mutable_data()[0] += 1.0;
    CHECK(copy.temporal().enc_w.data()[0] != m.temporal().enc_w.data()[0]);
}

TEST_CASE("checkpoint round trip") {
    ModelConfig c = fixtures::tiny_config();
    c.scale_by_head_dim = true;
    c.dropout = 0.25;
    auto m = TwoChannelTransformer::init(c, 31);
    fixtures::randomize_all(m, 32);
    const auto bytes = encode_checkpoint(m);
    REQUIRE(bytes.size() > 12);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "TWOCHCKP");
    CHECK(bytes[8] == kCheckpointVersion);  // little-endian u32
    CHECK(bytes[9] == 0);

    const auto back = decode_checkpoint(bytes);
    CHECK(back.config() == c);
    const auto pa = m.named_parameters(), pb = back.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].tensor.shape() == pb[i].tensor.shape());
        CHECK(oracle::vec(pa[i].tensor) == oracle::vec(pb[i].tensor));
    }
    std::mt19937_64 rng(33);
    const Tensor x = random_padded(c, rng);
    CHECK(oracle::vec(back.forward(x)) == oracle::vec(m.forward(x)));

    const auto path = std::filesystem::temp_directory_path() / "twoch_model_tests" / "m.ckpt";
    save_checkpoint(path, m);
    CHECK(oracle::vec(load_checkpoint(path).forward(x)) == oracle::vec(m.forward(x)));

    SUBCASE("corruption is detected") {
        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
        bad = bytes;
        bad[8] = 99;
        CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
        bad = bytes;
        bad.push_back(0);
        CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
        bad = bytes;
        bad.resize(bytes.size() - 5);
        CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
        CHECK_THROWS_AS(load_checkpoint(path.parent_path() / "missing.ckpt"), Error);
    }
}
