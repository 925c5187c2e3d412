#pragma once

#include <string>
#include <vector>

#include "skelmamba/scan2d.hpp"
#include "skelmamba/tensor.hpp"

namespace skelmamba {

// Ordered joint index set; the list order fixes the scan order of the
// gathered sub-skeleton.
struct PartitionSpec {
    std::string name;
    std::vector<int64_t> indices;
};

// Unique in-range indices per partition, at least one partition, and the
// union covering every joint.
void validate_partitions(const std::vector<PartitionSpec>& parts, int64_t v);

struct PgmAblation {
    bool use_partitions = true;
    bool use_tokens = true;
    bool learnable_fusion = true;  // frozen at 1/(P+1) when off
    bool use_channel_attention = true;
};

struct PgmParams {
    int64_t c = 0;                       // channels handled by this head
    std::vector<PartitionSpec> parts;
    PartitionSpec global;                // all joints, explicit order
    std::vector<C2dSsmParams> part_ssm;
    std::vector<Tensor> tokens;          // b_p: [T, |I_p|, C]
    C2dSsmParams global_ssm;
    Tensor beta;                         // [P+1], global last
    Tensor attn_w1, attn_b1, attn_w2, attn_b2;  // C -> C/r -> C
    Tensor residual_gate;                // scalar, default 1 (inert)
    PgmAblation ablation;

    void collect(const std::string& prefix, ParamList& out);
};

PgmParams make_pgm(int64_t c, int64_t t, int64_t v, int64_t state_size,
                   const std::vector<PartitionSpec>& parts, uint64_t seed,
                   std::string_view name, const PgmAblation& ab = {},
                   bool one_directional = false);

// Gathers the partition's joints, adds its token, and runs its C-2D-SSM.
Tensor partition_forward(const Tensor& x, const PartitionSpec& part,
                         const C2dSsmParams& ssm, const Tensor& token);

// X_ssm[t, j] = beta_g x_g[t, j] + sum over partitions containing j of
// beta_p x_p[t, pos(j)]; joints in several partitions accumulate.
Tensor fuse(const std::vector<Tensor>& x_parts,
            const std::vector<PartitionSpec>& parts, const Tensor& x_g,
            const PartitionSpec& global, const Tensor& beta, int64_t v);

// w = sigmoid(Linear(GELU(Linear(Pool(x))))); Pool averages every axis but
// the trailing channel axis, keeping a leading batch axis on rank-4 input.
Tensor channel_attention(const Tensor& x_ssm, const Tensor& w1, const Tensor& b1,
                         const Tensor& w2, const Tensor& b2);

Tensor pgm_forward(const Tensor& x, const PgmParams& p);

constexpr int64_t kAttentionBottleneck = 4;  // squeeze ratio r

int64_t pgm_param_count(int64_t c, int64_t t, int64_t state_size,
                        const std::vector<PartitionSpec>& parts, int64_t v,
                        const PgmAblation& ab = {}, bool one_directional = false);

}  // namespace skelmamba
