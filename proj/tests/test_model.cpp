#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "skelmamba/data.hpp"
#include "skelmamba/model.hpp"
#include "testutil.hpp"

using namespace skelmamba;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.num_joints = 6;
    cfg.c_in = 3;
    cfg.channels = 16;
    cfg.num_blocks = 2;
    cfg.heads = 4;
    cfg.num_classes = 3;
    cfg.t_in = 8;
    cfg.k_t = 5;
    cfg.state_size = 4;
    cfg.ffn_ratio = 2;
    cfg.tdown_after = {0};
    cfg.partitions = {{"upper", {0, 1, 2}}, {"lower", {3, 4, 5}},
                      {"mixed", {1, 3}}};
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config();
    cfg.validate();
    ModelConfig bad = cfg;
    bad.tdown_after = {1, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.t_in = 9;  // not divisible by 2^1
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.partitions = {{"a", {0}}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("frame schedule follows the downsampling points") {
    ModelConfig cfg = tiny_config();
    cfg.num_blocks = 4;
    cfg.t_in = 16;
    cfg.tdown_after = {0, 2};
    CHECK(cfg.frames_at_block(0) == 16);
    CHECK(cfg.frames_at_block(1) == 8);
    CHECK(cfg.frames_at_block(2) == 8);
    CHECK(cfg.frames_at_block(3) == 4);
    CHECK(cfg.frames_final() == 4);
}

TEST_CASE("embedding: zero input with zero biases yields the token") {
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 3);
    Tensor x = Tensor::zeros({2, cfg.t_in, cfg.num_joints, 3});
    Tensor e = embed(x, m);
    CHECK(e.shape() == Shape{2, cfg.t_in, cfg.num_joints, cfg.channels});
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < m.token.numel(); ++i)
            CHECK(e.data()[b * m.token.numel() + i] == m.token.data()[i]);
}

TEST_CASE("embedding rejects wrong frame counts with a resample hint") {
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 4);
    Tensor x = Tensor::zeros({1, cfg.t_in + 2, cfg.num_joints, 3});
    try {
        embed(x, m);
        FAIL("expected DomainError");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("resample") != std::string::npos);
    }
}

TEST_CASE("token gradient accumulates the upstream gradient over the batch") {
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 5);
    Tensor x = random_tensor({3, cfg.t_in, cfg.num_joints, 3}, 1);
    m.token.zero_grad();
    {
        TapeScope scope;
        backward(sum(embed(x, m)));
    }
    for (double g : m.token.grad()) CHECK(g == doctest::Approx(3.0));
}

TEST_CASE("forward produces deterministic logits with the right shape") {
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 6);
    Tensor one = random_tensor({1, cfg.t_in, cfg.num_joints, 3}, 2);
    std::vector<double> rep;
    for (int i = 0; i < 4; ++i)
        rep.insert(rep.end(), one.data().begin(), one.data().end());
    Tensor batch = Tensor::from({4, cfg.t_in, cfg.num_joints, 3}, rep);
    NoGradGuard ng;
    Tensor logits = model_forward(batch, m, false);
    CHECK(logits.shape() == Shape{4, cfg.num_classes});
    for (int64_t b = 1; b < 4; ++b)
        for (int64_t k = 0; k < cfg.num_classes; ++k)
            CHECK(logits.at({b, k}) == logits.at({0, k}));
    Tensor again = model_forward(batch, m, false);
    CHECK(testutil::bitwise_equal(logits.data(), again.data()));
}

TEST_CASE("nonfinite activations name the offending block") {
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 7);
    m.blocks[1].ffn_w2.mutable_data()[0] = std::nan("");
    Tensor x = random_tensor({1, cfg.t_in, cfg.num_joints, 3}, 3);
    NoGradGuard ng;
    try {
        model_forward(x, m, false);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("block 1") != std::string::npos);
    }
}

TEST_CASE("full tiny model gradient check") {
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 8);
    Tensor x = random_tensor({2, cfg.t_in, cfg.num_joints, 3}, 4, 0.6);
    std::vector<int64_t> labels = {0, 2};
    auto loss = [&]() {
        Tensor logits = model_forward(x, m, true);
        Tensor lsm = log_softmax(logits);
        Tensor mask = Tensor::zeros({2, cfg.num_classes});
        mask.mutable_data()[labels[0]] = 1.0;
        mask.mutable_data()[cfg.num_classes + labels[1]] = 1.0;
        return scale(sum(mul(mask, lsm)), -0.5);
    };
    ParamList params = m.parameters();
    CHECK(testutil::fd_check_params(loss, params, 1e-3, 6) <= 1e-4);
}

TEST_CASE("joint permutation with consistent plumbing leaves logits unchanged") {
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 9);
    const int64_t v = cfg.num_joints;
    const std::vector<int64_t> perm = {3, 0, 5, 1, 4, 2};  // new <- old
    std::vector<int64_t> inv(v);
    for (int64_t j = 0; j < v; ++j) inv[perm[j]] = j;

    Tensor x = random_tensor({2, cfg.t_in, v, 3}, 5);
    NoGradGuard ng;
    Tensor base = model_forward(x, m, false);

    // permuted input: new joint j' holds old joint perm[j']
    ModelParams mp = build_model(cfg, 9);
    Tensor xp = gather_axis(x, 2, perm);
    // token joint axis
    mp.token = gather_axis(m.token, 1, perm);
    // every partition (and the global order) renamed through the inverse map
    for (auto& block : mp.blocks) {
        for (auto& head : block.pgm_heads) {
            for (size_t p = 0; p < head.parts.size(); ++p)
                for (auto& idx : head.parts[p].indices) idx = inv[idx];
            for (auto& idx : head.global.indices) idx = inv[idx];
        }
        // conjugate the joint mixing stacks
        const int64_t h4 = cfg.heads / 4;
        Tensor a2 = Tensor::zeros({h4, v, v}, true);
        for (int64_t h = 0; h < h4; ++h)
            for (int64_t i = 0; i < v; ++i)
                for (int64_t j = 0; j < v; ++j)
                    a2.mutable_data()[(h * v + inv[i]) * v + inv[j]] =
                        block.a_s.data()[(h * v + i) * v + j];
        block.a_s = a2;
    }
    Tensor permuted = model_forward(xp, mp, false);
    CHECK(testutil::max_abs_diff(base.data(), permuted.data()) <= 1e-12);
}

TEST_CASE("param_count matches the constructed parameter total") {
    for (uint64_t seed : {0ull, 1ull}) {
        ModelConfig cfg = tiny_config();
        if (seed == 1) {
            cfg.channels = 32;
            cfg.heads = 8;
            cfg.ablation.scan_1d = true;
        }
        ModelParams m = build_model(cfg, seed);
        ParamList params = m.parameters();
        CHECK(total_elements(params) == param_count(cfg));
    }
}

TEST_CASE("single linear layer closed form and quadratic channel scaling") {
    // c_in -> C with bias
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 10);
    CHECK(m.emb_w1.numel() + m.emb_b1.numel() ==
          cfg.c_in * cfg.channels + cfg.channels);
    // doubling C roughly quadruples the square linears
    ModelConfig cfg2 = tiny_config();
    cfg2.channels *= 2;
    ModelParams m2 = build_model(cfg2, 10);
    const double ratio = static_cast<double>(m2.blocks[0].ffn_w1.numel()) /
                         static_cast<double>(m.blocks[0].ffn_w1.numel());
    CHECK(ratio == doctest::Approx(4.0));
}

TEST_CASE("flops estimate scales with depth and width") {
    ModelConfig cfg = tiny_config();
    const int64_t base = flops_estimate(cfg);
    ModelConfig deeper = cfg;
    deeper.num_blocks = 4;
    deeper.tdown_after = {0};
    CHECK(flops_estimate(deeper) > base);
    ModelConfig wider = cfg;
    wider.channels *= 2;
    CHECK(flops_estimate(wider) > 2 * base);
}

TEST_CASE("checkpoint round-trips bitwise") {
    ModelConfig cfg = tiny_config();
    ModelParams m = build_model(cfg, 11);
    // drift the running stats so buffers are exercised too
    Tensor x = random_tensor({2, cfg.t_in, cfg.num_joints, 3}, 6);
    model_forward(x, m, true);
    Tape::get().clear();
    const std::string path = "/tmp/skelmamba_test_ckpt.skmb";
    save_checkpoint(path, m, {"alpha", "beta", "gamma"});
    std::vector<std::string> classes;
    ModelParams loaded = load_checkpoint(path, &classes);
    CHECK(classes == std::vector<std::string>{"alpha", "beta", "gamma"});
    ParamList a = m.parameters();
    ParamList b = loaded.parameters();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(testutil::bitwise_equal(a[i].tensor.data(), b[i].tensor.data()));
    }
    auto ba = m.buffers();
    auto bb = loaded.buffers();
    for (size_t i = 0; i < ba.size(); ++i)
        CHECK(*ba[i].second == *bb[i].second);
    std::remove(path.c_str());
}

TEST_CASE("model config json round-trip") {
    ModelConfig cfg = tiny_config();
    cfg.ablation.streams.temporal = false;
    cfg.ablation.pgm.use_tokens = false;
    ModelConfig back = model_config_from_json(model_config_to_json(cfg));
    CHECK(back.channels == cfg.channels);
    CHECK(back.tdown_after == cfg.tdown_after);
    CHECK(back.partitions.size() == cfg.partitions.size());
    CHECK(back.partitions[2].indices == cfg.partitions[2].indices);
    CHECK(back.ablation.streams.temporal == false);
    CHECK(back.ablation.pgm.use_tokens == false);
    CHECK_THROWS_AS(model_config_from_json("{"), ParseError);
    CHECK_THROWS_AS(model_config_from_json("{\"channels\": 16}"), SchemaError);
}
