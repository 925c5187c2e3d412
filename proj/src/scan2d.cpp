#include "skelmamba/scan2d.hpp"

#include <algorithm>

namespace skelmamba {

std::vector<int64_t> flatten_order(int64_t t, int64_t v, ScanDirection dir) {
    if (t < 1 || v < 1) throw DomainError("flatten_order: need T,V >= 1");
    std::vector<int64_t> order;
    order.reserve(t * v);
    switch (dir) {
        case ScanDirection::TtoS:
        case ScanDirection::TtoS_rev:
            for (int64_t i = 0; i < t; ++i)
                for (int64_t j = 0; j < v; ++j) order.push_back(i * v + j);
            break;
        case ScanDirection::StoT:
        case ScanDirection::StoT_rev:
            for (int64_t j = 0; j < v; ++j)
                for (int64_t i = 0; i < t; ++i) order.push_back(i * v + j);
            break;
    }
    if (dir == ScanDirection::TtoS_rev || dir == ScanDirection::StoT_rev)
        std::reverse(order.begin(), order.end());
    return order;
}

std::vector<Tensor> split4(const Tensor& x) {
    if (!x.defined()) throw UsageError("split4: undefined operand");
    const int64_t c = x.shape().back();
    if (c % 4 != 0)
        throw ConfigError("split4: channel count " + std::to_string(c) +
                          " not divisible by 4");
    const int64_t q = c / 4;
    std::vector<Tensor> groups;
    groups.reserve(4);
    for (int g = 0; g < 4; ++g) groups.push_back(narrow(x, -1, g * q, q));
    return groups;
}

void MambaBlockParams::collect(const std::string& prefix, ParamList& out) {
    add_param(out, prefix + ".w_in", w_in);
    add_param(out, prefix + ".conv_w", conv_w);
    add_param(out, prefix + ".conv_b", conv_b);
    scan.collect(prefix + ".scan", out);
    add_param(out, prefix + ".w_out", w_out);
}

MambaBlockParams make_mamba_block(int64_t d, int64_t n, uint64_t seed,
                                  std::string_view name) {
    if (d < 1) throw ConfigError("mamba block: need d >= 1");
    MambaBlockParams p;
    p.d = d;
    p.d_inner = kMambaExpand * d;
    const std::string base(name);
    {
        Rng rng = Rng::keyed(seed, base + ".w_in");
        p.w_in = kaiming_uniform({d, 2 * p.d_inner}, d, rng);
    }
    {
        Rng rng = Rng::keyed(seed, base + ".conv");
        p.conv_w = kaiming_uniform({p.d_inner, 1, kMambaConvWidth}, kMambaConvWidth,
                                   rng);
        p.conv_b = Tensor::zeros({p.d_inner}, true);
    }
    p.scan = make_selective_weights(p.d_inner, n, seed, base + ".scan");
    {
        Rng rng = Rng::keyed(seed, base + ".w_out");
        p.w_out = kaiming_uniform({p.d_inner, d}, p.d_inner, rng);
    }
    return p;
}

Tensor mamba_block_forward(const Tensor& x, const MambaBlockParams& p) {
    if (!x.defined()) throw UsageError("mamba_block: undefined input");
    const size_t r = x.shape().size();
    if ((r != 2 && r != 3) || x.shape().back() != p.d)
        throw ShapeError("mamba_block: expected [..,L," + std::to_string(p.d) +
                         "], got " + shape_str(x.shape()));
    const int64_t L = x.shape()[r - 2];
    Tensor xz = matmul(x, p.w_in);
    Tensor sig = narrow(xz, -1, 0, p.d_inner);
    Tensor gate = narrow(xz, -1, p.d_inner, p.d_inner);
    // depthwise causal conv along L: pad left by k-1 and keep the first L steps
    std::vector<int> to_ct(r), from_ct(r);
    if (r == 2) {
        to_ct = {1, 0};
        from_ct = {1, 0};
    } else {
        to_ct = {0, 2, 1};
        from_ct = {0, 2, 1};
    }
    Tensor seq = permute(sig, to_ct);  // [.., d_inner, L]
    seq = conv1d_grouped(seq, p.conv_w, p.conv_b, p.d_inner, 1,
                         kMambaConvWidth - 1);
    seq = narrow(seq, -1, 0, L);
    Tensor act = silu(permute(seq, from_ct));
    Tensor y = selective_scan(act, p.scan);
    y = mul(y, silu(gate));
    return matmul(y, p.w_out);
}

void C2dSsmParams::collect(const std::string& prefix, ParamList& out) {
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".dir" + std::to_string(i), out);
}

C2dSsmParams make_c2dssm(int64_t c, int64_t n, uint64_t seed,
                         std::string_view name, bool one_directional) {
    C2dSsmParams p;
    p.one_directional = one_directional;
    const std::string base(name);
    if (one_directional) {
        p.blocks.push_back(make_mamba_block(c, n, seed, base + ".dir0"));
        return p;
    }
    if (c % 4 != 0)
        throw ConfigError("c2dssm: channel count " + std::to_string(c) +
                          " not divisible by 4");
    for (int g = 0; g < 4; ++g)
        p.blocks.push_back(
            make_mamba_block(c / 4, n, seed, base + ".dir" + std::to_string(g)));
    return p;
}

namespace {

// [.., T, V, c] -> [.., T*V, c] sequence in the direction's scan order
Tensor to_sequence(const Tensor& x, ScanDirection dir) {
    const size_t r = x.shape().size();
    const int64_t t = x.shape()[r - 3];
    const int64_t v = x.shape()[r - 2];
    const int64_t c = x.shape()[r - 1];
    const bool batched = (r == 4);
    const int64_t b = batched ? x.shape()[0] : 1;
    Tensor seq = x;
    if (dir == ScanDirection::StoT || dir == ScanDirection::StoT_rev) {
        seq = batched ? permute(seq, {0, 2, 1, 3}) : permute(seq, {1, 0, 2});
    }
    seq = batched ? reshape(seq, {b, t * v, c}) : reshape(seq, {t * v, c});
    if (dir == ScanDirection::TtoS_rev || dir == ScanDirection::StoT_rev) {
        std::vector<int64_t> rev(t * v);
        for (int64_t i = 0; i < t * v; ++i) rev[i] = t * v - 1 - i;
        seq = gather_axis(seq, batched ? 1 : 0, rev);
    }
    return seq;
}

Tensor from_sequence(const Tensor& seq, ScanDirection dir, int64_t t, int64_t v) {
    const size_t r = seq.shape().size();
    const bool batched = (r == 3);
    const int64_t b = batched ? seq.shape()[0] : 1;
    const int64_t c = seq.shape()[r - 1];
    Tensor y = seq;
    if (dir == ScanDirection::TtoS_rev || dir == ScanDirection::StoT_rev) {
        std::vector<int64_t> rev(t * v);
        for (int64_t i = 0; i < t * v; ++i) rev[i] = t * v - 1 - i;
        y = gather_axis(y, batched ? 1 : 0, rev);
    }
    if (dir == ScanDirection::StoT || dir == ScanDirection::StoT_rev) {
        y = batched ? reshape(y, {b, v, t, c}) : reshape(y, {v, t, c});
        y = batched ? permute(y, {0, 2, 1, 3}) : permute(y, {1, 0, 2});
    } else {
        y = batched ? reshape(y, {b, t, v, c}) : reshape(y, {t, v, c});
    }
    return y;
}

}  // namespace

Tensor c2dssm_forward(const Tensor& x, const C2dSsmParams& p) {
    if (!x.defined()) throw UsageError("c2dssm: undefined input");
    const size_t r = x.shape().size();
    if (r != 3 && r != 4)
        throw ShapeError("c2dssm: expected [..,T,V,C], got " + shape_str(x.shape()));
    const int64_t t = x.shape()[r - 3];
    const int64_t v = x.shape()[r - 2];
    if (p.one_directional) {
        Tensor seq = to_sequence(x, ScanDirection::TtoS);
        Tensor y = mamba_block_forward(seq, p.blocks[0]);
        return from_sequence(y, ScanDirection::TtoS, t, v);
    }
    std::vector<Tensor> groups = split4(x);
    std::vector<Tensor> outs;
    outs.reserve(4);
    for (int g = 0; g < 4; ++g) {
        const ScanDirection dir = kScanDirections[g];
        Tensor seq = to_sequence(groups[g], dir);
        Tensor y = mamba_block_forward(seq, p.blocks[g]);
        outs.push_back(from_sequence(y, dir, t, v));
    }
    return concat(outs, -1);
}

int64_t mamba_block_param_count(int64_t d, int64_t n) {
    const int64_t di = kMambaExpand * d;
    return d * 2 * di                         // w_in
           + di * kMambaConvWidth + di       // depthwise conv
           + selective_weights_param_count(di, n)
           + di * d;                          // w_out
}

int64_t c2dssm_param_count(int64_t c, int64_t n, bool one_directional) {
    if (one_directional) return mamba_block_param_count(c, n);
    return 4 * mamba_block_param_count(c / 4, n);
}

}  // namespace skelmamba
