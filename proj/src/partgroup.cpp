#include "skelmamba/partgroup.hpp"

#include <set>

namespace skelmamba {

void validate_partitions(const std::vector<PartitionSpec>& parts, int64_t v) {
    if (parts.empty())
        throw ConfigError("partitions: at least one partition required");
    std::vector<bool> covered(v, false);
    for (const PartitionSpec& p : parts) {
        if (p.indices.empty())
            throw ConfigError("partition '" + p.name + "' is empty");
        std::set<int64_t> seen;
        for (int64_t i : p.indices) {
            if (i < 0 || i >= v)
                throw ConfigError("partition '" + p.name + "': joint index " +
                                  std::to_string(i) + " out of range [0," +
                                  std::to_string(v) + ")");
            if (!seen.insert(i).second)
                throw ConfigError("partition '" + p.name + "': duplicate index " +
                                  std::to_string(i));
            covered[i] = true;
        }
    }
    for (int64_t j = 0; j < v; ++j)
        if (!covered[j])
            throw ConfigError("partitions: joint " + std::to_string(j) +
                              " not covered by any partition");
}

void PgmParams::collect(const std::string& prefix, ParamList& out) {
    for (size_t p = 0; p < part_ssm.size(); ++p) {
        part_ssm[p].collect(prefix + ".part" + std::to_string(p), out);
        if (tokens[p].defined())
            add_param(out, prefix + ".token" + std::to_string(p), tokens[p],
                      /*decay=*/false);
    }
    global_ssm.collect(prefix + ".global", out);
    if (beta.requires_grad()) add_param(out, prefix + ".beta", beta, false);
    if (attn_w1.defined()) {
        add_param(out, prefix + ".attn_w1", attn_w1);
        add_param(out, prefix + ".attn_b1", attn_b1);
        add_param(out, prefix + ".attn_w2", attn_w2);
        add_param(out, prefix + ".attn_b2", attn_b2);
    }
}

PgmParams make_pgm(int64_t c, int64_t t, int64_t v, int64_t state_size,
                   const std::vector<PartitionSpec>& parts, uint64_t seed,
                   std::string_view name, const PgmAblation& ab,
                   bool one_directional) {
    validate_partitions(parts, v);
    PgmParams g;
    g.c = c;
    g.ablation = ab;
    const std::string base(name);
    g.global.name = "global";
    g.global.indices.resize(v);
    for (int64_t j = 0; j < v; ++j) g.global.indices[j] = j;
    g.global_ssm = make_c2dssm(c, state_size, seed, base + ".global",
                               one_directional);
    if (ab.use_partitions) {
        g.parts = parts;
        for (size_t p = 0; p < parts.size(); ++p) {
            g.part_ssm.push_back(make_c2dssm(c, state_size, seed,
                                             base + ".part" + std::to_string(p),
                                             one_directional));
            if (ab.use_tokens) {
                Rng rng = Rng::keyed(seed, base + ".token" + std::to_string(p));
                g.tokens.push_back(randn(
                    {t, static_cast<int64_t>(parts[p].indices.size()), c}, rng,
                    0.02, true));
            } else {
                g.tokens.push_back(Tensor());
            }
        }
    }
    const int64_t np = static_cast<int64_t>(g.parts.size());
    g.beta = Tensor::full({np + 1}, 1.0 / static_cast<double>(np + 1),
                          ab.learnable_fusion);
    if (ab.use_channel_attention) {
        const int64_t hidden = std::max<int64_t>(1, c / kAttentionBottleneck);
        if (c % kAttentionBottleneck != 0 && c > kAttentionBottleneck)
            throw ConfigError("channel attention: bottleneck ratio " +
                              std::to_string(kAttentionBottleneck) +
                              " must divide C=" + std::to_string(c));
        {
            Rng rng = Rng::keyed(seed, base + ".attn1");
            g.attn_w1 = kaiming_uniform({c, hidden}, c, rng);
            g.attn_b1 = Tensor::zeros({hidden}, true);
        }
        {
            Rng rng = Rng::keyed(seed, base + ".attn2");
            g.attn_w2 = kaiming_uniform({hidden, c}, hidden, rng);
            g.attn_b2 = Tensor::zeros({c}, true);
        }
    }
    g.residual_gate = Tensor::scalar(1.0);  // inert unless enabled by hand
    return g;
}

Tensor partition_forward(const Tensor& x, const PartitionSpec& part,
                         const C2dSsmParams& ssm, const Tensor& token) {
    if (!x.defined()) throw UsageError("partition_forward: undefined input");
    const size_t r = x.shape().size();
    if (r != 3 && r != 4)
        throw ShapeError("partition_forward: expected [..,T,V,C], got " +
                         shape_str(x.shape()));
    const int64_t v = x.shape()[r - 2];
    for (int64_t i : part.indices)
        if (i < 0 || i >= v)
            throw ConfigError("partition '" + part.name + "': joint index " +
                              std::to_string(i) + " out of range [0," +
                              std::to_string(v) + ")");
    Tensor g = gather_axis(x, static_cast<int>(r) - 2, part.indices);
    if (token.defined()) g = add(g, token);
    return c2dssm_forward(g, ssm);
}

Tensor fuse(const std::vector<Tensor>& x_parts,
            const std::vector<PartitionSpec>& parts, const Tensor& x_g,
            const PartitionSpec& global, const Tensor& beta, int64_t v) {
    if (x_parts.size() != parts.size())
        throw UsageError("fuse: partition outputs and specs differ in count");
    const int64_t np = static_cast<int64_t>(parts.size());
    if (beta.numel() != np + 1)
        throw ShapeError("fuse: beta must have P+1 entries");
    const size_t r = x_g.shape().size();
    const int joint_axis = static_cast<int>(r) - 2;
    Tensor acc = mul(scatter_add_axis(x_g, joint_axis, global.indices, v),
                     narrow(beta, 0, np, 1));
    for (int64_t p = 0; p < np; ++p) {
        Tensor scattered =
            scatter_add_axis(x_parts[p], joint_axis, parts[p].indices, v);
        acc = add(acc, mul(scattered, narrow(beta, 0, p, 1)));
    }
    return acc;
}

Tensor channel_attention(const Tensor& x_ssm, const Tensor& w1, const Tensor& b1,
                         const Tensor& w2, const Tensor& b2) {
    if (!x_ssm.defined()) throw UsageError("channel_attention: undefined input");
    const int r = static_cast<int>(x_ssm.shape().size());
    std::vector<int> axes;
    for (int i = (r == 4) ? 1 : 0; i < r - 1; ++i) axes.push_back(i);
    Tensor pooled = axes.empty() ? x_ssm : mean_axes(x_ssm, axes);
    const bool vector_in = pooled.shape().size() == 1;
    if (vector_in) pooled = reshape(pooled, {1, pooled.numel()});
    Tensor hidden = gelu(linear(pooled, w1, b1));
    Tensor w = sigmoid(linear(hidden, w2, b2));
    if (vector_in) w = reshape(w, {w.numel()});
    return w;
}

Tensor pgm_forward(const Tensor& x, const PgmParams& p) {
    if (!x.defined()) throw UsageError("pgm_forward: undefined input");
    const size_t r = x.shape().size();
    if (r != 3 && r != 4)
        throw ShapeError("pgm_forward: expected [..,T,V,C], got " +
                         shape_str(x.shape()));
    const int64_t v = x.shape()[r - 2];
    Tensor x_g = partition_forward(x, p.global, p.global_ssm, Tensor());
    std::vector<Tensor> x_parts;
    x_parts.reserve(p.parts.size());
    for (size_t q = 0; q < p.parts.size(); ++q)
        x_parts.push_back(
            partition_forward(x, p.parts[q], p.part_ssm[q], p.tokens[q]));
    Tensor x_ssm = fuse(x_parts, p.parts, x_g, p.global, p.beta, v);
    Tensor res = x;
    if (p.residual_gate.defined() &&
        (p.residual_gate.requires_grad() || p.residual_gate.item() != 1.0))
        res = mul(res, p.residual_gate);
    Tensor out = add(x_ssm, res);
    if (p.ablation.use_channel_attention) {
        Tensor w = channel_attention(x_ssm, p.attn_w1, p.attn_b1, p.attn_w2,
                                     p.attn_b2);
        if (w.shape().size() == 2 && r == 4) {
            // [B, C] against [B, T, V, C]
            w = reshape(w, {w.shape()[0], 1, 1, w.shape()[1]});
        }
        out = mul(out, w);
    }
    return out;
}

int64_t pgm_param_count(int64_t c, int64_t t, int64_t state_size,
                        const std::vector<PartitionSpec>& parts, int64_t v,
                        const PgmAblation& ab, bool one_directional) {
    (void)v;
    int64_t n = c2dssm_param_count(c, state_size, one_directional);  // global
    if (ab.use_partitions) {
        for (const PartitionSpec& p : parts) {
            n += c2dssm_param_count(c, state_size, one_directional);
            if (ab.use_tokens)
                n += t * static_cast<int64_t>(p.indices.size()) * c;
        }
    }
    if (ab.learnable_fusion)
        n += static_cast<int64_t>(ab.use_partitions ? parts.size() : 0) + 1;
    if (ab.use_channel_attention) {
        const int64_t hidden = std::max<int64_t>(1, c / kAttentionBottleneck);
        n += c * hidden + hidden + hidden * c + c;
    }
    return n;
}

}  // namespace skelmamba
