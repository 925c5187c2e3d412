#include "skelmamba/blocks.hpp"

namespace skelmamba {

void BlockConfig::validate() const {
    if (channels < 4 || heads < 4 || joints < 1 || frames < 1)
        throw ConfigError("block config: need C>=4, H>=4, V>=1, T>=1");
    if (heads % 4 != 0)
        throw ConfigError("block config: H=" + std::to_string(heads) +
                          " must be divisible by 4");
    if (channels % 4 != 0)
        throw ConfigError("block config: C=" + std::to_string(channels) +
                          " must be divisible by 4");
    const int64_t h4 = heads / 4;
    if ((channels / 4) % h4 != 0)
        throw ConfigError("block config: C/4 must be divisible by H/4");
    if ((channels / 2) % h4 != 0)
        throw ConfigError("block config: C/2 must be divisible by H/4");
    if (k_t < 1 || k_t % 2 == 0)
        throw ConfigError("block config: k_t=" + std::to_string(k_t) +
                          " must be odd");
    if (state_size < 1 || ffn_ratio < 1 || ln_eps <= 0.0)
        throw ConfigError("block config: invalid state size / ffn ratio / eps");
}

void TsmbParams::collect(const std::string& prefix, ParamList& out) {
    add_param(out, prefix + ".w_split", w_split);
    add_param(out, prefix + ".b_split", b_split);
    add_param(out, prefix + ".w_merge", w_merge);
    add_param(out, prefix + ".b_merge", b_merge);
    if (streams.spatial) add_param(out, prefix + ".a_s", a_s);
    if (streams.temporal) {
        add_param(out, prefix + ".temporal_w", temporal_w);
        add_param(out, prefix + ".temporal_b", temporal_b);
    }
    if (streams.pgm)
        for (size_t h = 0; h < pgm_heads.size(); ++h)
            pgm_heads[h].collect(prefix + ".pgm" + std::to_string(h), out);
    add_param(out, prefix + ".ln1_g", ln1_g, false);
    add_param(out, prefix + ".ln1_b", ln1_b, false);
    add_param(out, prefix + ".ln2_g", ln2_g, false);
    add_param(out, prefix + ".ln2_b", ln2_b, false);
    add_param(out, prefix + ".ffn_w1", ffn_w1);
    add_param(out, prefix + ".ffn_b1", ffn_b1);
    add_param(out, prefix + ".ffn_w2", ffn_w2);
    add_param(out, prefix + ".ffn_b2", ffn_b2);
}

TsmbParams make_tsmb(const BlockConfig& cfg,
                     const std::vector<PartitionSpec>& parts, uint64_t seed,
                     std::string_view name, const StreamAblation& streams,
                     const PgmAblation& pgm_ab, bool scan_1d) {
    cfg.validate();
    TsmbParams p;
    p.cfg = cfg;
    p.streams = streams;
    p.scan_1d = scan_1d;
    const std::string base(name);
    const int64_t c = cfg.channels;
    const int64_t h4 = cfg.heads / 4;
    {
        Rng rng = Rng::keyed(seed, base + ".split");
        p.w_split = kaiming_uniform({c, c}, c, rng);
        p.b_split = Tensor::zeros({c}, true);
    }
    {
        Rng rng = Rng::keyed(seed, base + ".merge");
        p.w_merge = kaiming_uniform({c, c}, c, rng);
        p.b_merge = Tensor::zeros({c}, true);
    }
    if (streams.spatial) {
        // near-identity joint mixing at start
        Rng rng = Rng::keyed(seed, base + ".a_s");
        p.a_s = Tensor::zeros({h4, cfg.joints, cfg.joints}, true);
        auto span = p.a_s.mutable_data();
        for (int64_t h = 0; h < h4; ++h)
            for (int64_t i = 0; i < cfg.joints; ++i)
                for (int64_t j = 0; j < cfg.joints; ++j)
                    span[(h * cfg.joints + i) * cfg.joints + j] =
                        (i == j ? 1.0 : 0.0) + 0.01 * rng.normal();
    }
    if (streams.temporal) {
        Rng rng = Rng::keyed(seed, base + ".temporal");
        const int64_t c4 = c / 4;
        p.temporal_w = kaiming_uniform({c4, c4 / h4, cfg.k_t}, (c4 / h4) * cfg.k_t,
                                       rng);
        p.temporal_b = Tensor::zeros({c4}, true);
    }
    if (streams.pgm) {
        const int64_t c_head = (c / 2) / h4;
        for (int64_t h = 0; h < h4; ++h)
            p.pgm_heads.push_back(make_pgm(c_head, cfg.frames, cfg.joints,
                                           cfg.state_size, parts, seed,
                                           base + ".pgm" + std::to_string(h),
                                           pgm_ab, scan_1d));
    }
    p.ln1_g = Tensor::full({c}, 1.0, true);
    p.ln1_b = Tensor::zeros({c}, true);
    p.ln2_g = Tensor::full({c}, 1.0, true);
    p.ln2_b = Tensor::zeros({c}, true);
    {
        Rng rng = Rng::keyed(seed, base + ".ffn1");
        p.ffn_w1 = kaiming_uniform({c, cfg.ffn_ratio * c}, c, rng);
        p.ffn_b1 = Tensor::zeros({cfg.ffn_ratio * c}, true);
    }
    {
        Rng rng = Rng::keyed(seed, base + ".ffn2");
        p.ffn_w2 = kaiming_uniform({cfg.ffn_ratio * c, c}, cfg.ffn_ratio * c, rng);
        p.ffn_b2 = Tensor::zeros({c}, true);
    }
    return p;
}

Tensor spatial_conv(const Tensor& x_s, const Tensor& a_s) {
    if (!x_s.defined() || !a_s.defined())
        throw UsageError("spatial_conv: undefined operand");
    const size_t r = x_s.shape().size();
    if (r != 3 && r != 4)
        throw ShapeError("spatial_conv: expected [..,T,V,C], got " +
                         shape_str(x_s.shape()));
    if (a_s.shape().size() != 3 || a_s.shape()[1] != a_s.shape()[2])
        throw ShapeError("spatial_conv: mixing stack must be [H/4,V,V], got " +
                         shape_str(a_s.shape()));
    const int64_t h4 = a_s.shape()[0];
    const int64_t v = a_s.shape()[1];
    const int64_t c = x_s.shape()[r - 1];
    if (x_s.shape()[r - 2] != v)
        throw ShapeError("spatial_conv: joint axis mismatch");
    if (c % h4 != 0)
        throw ConfigError("spatial_conv: channels not divisible by head count");
    const int64_t ch = c / h4;
    const bool batched = (r == 4);
    const int64_t bt = batched ? x_s.shape()[0] * x_s.shape()[1] : x_s.shape()[0];
    std::vector<Tensor> outs;
    outs.reserve(h4);
    for (int64_t h = 0; h < h4; ++h) {
        Tensor ah = reshape(narrow(a_s, 0, h, 1), {v, v});
        Tensor xh = narrow(x_s, -1, h * ch, ch);
        // fold everything but the joint axis into columns of one gemm
        Tensor cols = batched ? permute(xh, {2, 0, 1, 3}) : permute(xh, {1, 0, 2});
        cols = reshape(cols, {v, bt * ch});
        Tensor mixed = matmul(ah, cols);
        if (batched) {
            mixed = reshape(mixed, {v, x_s.shape()[0], x_s.shape()[1], ch});
            outs.push_back(permute(mixed, {1, 2, 0, 3}));
        } else {
            mixed = reshape(mixed, {v, x_s.shape()[0], ch});
            outs.push_back(permute(mixed, {1, 0, 2}));
        }
    }
    return h4 == 1 ? outs[0] : concat(outs, -1);
}

Tensor temporal_conv(const Tensor& x_t, const Tensor& weight, const Tensor& bias,
                     int64_t head_groups, int64_t k_t) {
    if (!x_t.defined() || !weight.defined())
        throw UsageError("temporal_conv: undefined operand");
    if (k_t % 2 == 0)
        throw ConfigError("temporal_conv: kernel size " + std::to_string(k_t) +
                          " must be odd");
    const size_t r = x_t.shape().size();
    if (r != 3 && r != 4)
        throw ShapeError("temporal_conv: expected [..,T,V,C], got " +
                         shape_str(x_t.shape()));
    const bool batched = (r == 4);
    // [.., T, V, C] -> [.., V, C, T]
    Tensor seq = batched ? permute(x_t, {0, 2, 3, 1}) : permute(x_t, {1, 2, 0});
    seq = conv1d_grouped(seq, weight, bias, head_groups, 1, (k_t - 1) / 2);
    return batched ? permute(seq, {0, 3, 1, 2}) : permute(seq, {2, 0, 1});
}

Tensor pgmb_forward(const Tensor& x, const TsmbParams& p) {
    if (!x.defined()) throw UsageError("pgmb_forward: undefined input");
    const int64_t c = p.cfg.channels;
    if (x.shape().back() != c)
        throw ShapeError("pgmb_forward: channel mismatch, expected " +
                         std::to_string(c) + " got " + shape_str(x.shape()));
    const int64_t c4 = c / 4;
    const int64_t h4 = p.cfg.heads / 4;
    Tensor u = linear(x, p.w_split, p.b_split);
    Tensor xs = narrow(u, -1, 0, c4);
    Tensor xm = narrow(u, -1, c4, c / 2);
    Tensor xt = narrow(u, -1, 3 * c4, c4);
    if (p.streams.spatial) xs = spatial_conv(xs, p.a_s);
    if (p.streams.pgm) {
        const int64_t c_head = (c / 2) / h4;
        std::vector<Tensor> heads;
        heads.reserve(h4);
        for (int64_t h = 0; h < h4; ++h) {
            Tensor xh = narrow(xm, -1, h * c_head, c_head);
            heads.push_back(pgm_forward(xh, p.pgm_heads[h]));
        }
        xm = h4 == 1 ? heads[0] : concat(heads, -1);
    }
    if (p.streams.temporal)
        xt = temporal_conv(xt, p.temporal_w, p.temporal_b, h4, p.cfg.k_t);
    Tensor cat = concat({xs, xm, xt}, -1);
    return linear(cat, p.w_merge, p.b_merge);
}

Tensor tsmb_forward(const Tensor& x, const TsmbParams& p) {
    Tensor h = add(x, pgmb_forward(layernorm(x, p.ln1_g, p.ln1_b, p.cfg.ln_eps), p));
    Tensor n2 = layernorm(h, p.ln2_g, p.ln2_b, p.cfg.ln_eps);
    Tensor ffn = linear(gelu(linear(n2, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
    return add(h, ffn);
}

void TdownParams::collect(const std::string& prefix, ParamList& out) {
    add_param(out, prefix + ".conv_w", conv_w);
    add_param(out, prefix + ".conv_b", conv_b);
    add_param(out, prefix + ".bn_g", bn_g, false);
    add_param(out, prefix + ".bn_b", bn_b, false);
}

TdownParams make_tdown(int64_t channels, uint64_t seed, std::string_view name) {
    TdownParams p;
    Rng rng = Rng::keyed(seed, std::string(name) + ".conv");
    p.conv_w = kaiming_uniform({channels, 1, 3}, 3, rng);
    p.conv_b = Tensor::zeros({channels}, true);
    p.bn_g = Tensor::full({channels}, 1.0, true);
    p.bn_b = Tensor::zeros({channels}, true);
    p.bn_state = std::make_shared<BatchNormState>();
    p.bn_state->init(channels);
    return p;
}

Tensor tdown(const Tensor& x, TdownParams& p, bool training) {
    if (!x.defined()) throw UsageError("tdown: undefined input");
    const size_t r = x.shape().size();
    if (r != 3 && r != 4)
        throw ShapeError("tdown: expected [..,T,V,C], got " + shape_str(x.shape()));
    const int64_t t = x.shape()[r - 3];
    if (t < 2) throw DomainError("tdown: need at least 2 frames, got " +
                                 std::to_string(t));
    const int64_t c = x.shape()[r - 1];
    const bool batched = (r == 4);
    Tensor seq = batched ? permute(x, {0, 2, 3, 1}) : permute(x, {1, 2, 0});
    seq = conv1d_grouped(seq, p.conv_w, p.conv_b, c, 2, 1);
    Tensor y = batched ? permute(seq, {0, 3, 1, 2}) : permute(seq, {2, 0, 1});
    return batchnorm(y, p.bn_g, p.bn_b, *p.bn_state, training);
}

int64_t tsmb_param_count(const BlockConfig& cfg,
                         const std::vector<PartitionSpec>& parts,
                         const StreamAblation& streams, const PgmAblation& pgm_ab,
                         bool scan_1d) {
    const int64_t c = cfg.channels;
    const int64_t h4 = cfg.heads / 4;
    int64_t n = 2 * (c * c + c);  // split + merge linears
    if (streams.spatial) n += h4 * cfg.joints * cfg.joints;
    if (streams.temporal) n += (c / 4) * ((c / 4) / h4) * cfg.k_t + c / 4;
    if (streams.pgm)
        n += h4 * pgm_param_count((c / 2) / h4, cfg.frames, cfg.state_size, parts,
                                  cfg.joints, pgm_ab, scan_1d);
    n += 4 * c;  // two layernorms
    n += c * cfg.ffn_ratio * c + cfg.ffn_ratio * c + cfg.ffn_ratio * c * c + c;
    return n;
}

int64_t tdown_param_count(int64_t channels) {
    return channels * 3 + channels + 2 * channels;
}

}  // namespace skelmamba
