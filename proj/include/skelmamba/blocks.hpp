#pragma once

#include <memory>

#include "skelmamba/partgroup.hpp"
#include "skelmamba/tensor.hpp"

namespace skelmamba {

struct BlockConfig {
    int64_t channels = 0;   // C
    int64_t heads = 0;      // H
    int64_t joints = 0;     // V
    int64_t frames = 0;     // T at this stage
    int64_t k_t = 7;        // temporal kernel size (odd)
    int64_t state_size = 16;
    int64_t ffn_ratio = 4;
    double ln_eps = 1e-5;

    void validate() const;
};

struct StreamAblation {
    bool spatial = true;
    bool temporal = true;
    bool pgm = true;
};

struct TsmbParams {
    BlockConfig cfg;
    StreamAblation streams;
    bool scan_1d = false;
    Tensor w_split, b_split;       // C -> C before the stream split
    Tensor w_merge, b_merge;       // C -> C after the concat
    Tensor a_s;                    // [H/4, V, V] learnable joint mixing
    Tensor temporal_w, temporal_b; // grouped conv over time
    std::vector<PgmParams> pgm_heads;  // H/4 heads on C/2/(H/4) channels each
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;

    void collect(const std::string& prefix, ParamList& out);
};

TsmbParams make_tsmb(const BlockConfig& cfg,
                     const std::vector<PartitionSpec>& parts, uint64_t seed,
                     std::string_view name, const StreamAblation& streams = {},
                     const PgmAblation& pgm_ab = {}, bool scan_1d = false);

// y[t] = a_s[h] . x[t] over the joint axis per head's channel slice.
Tensor spatial_conv(const Tensor& x_s, const Tensor& a_s);

// Per joint, H/4-grouped conv along time with same-length padding.
Tensor temporal_conv(const Tensor& x_t, const Tensor& weight, const Tensor& bias,
                     int64_t head_groups, int64_t k_t);

Tensor pgmb_forward(const Tensor& x, const TsmbParams& p);

// x + PGMB(LN(x)); x + FFN(LN(x)).
Tensor tsmb_forward(const Tensor& x, const TsmbParams& p);

struct TdownParams {
    Tensor conv_w, conv_b;  // depthwise kernel 3, stride 2, padding 1
    Tensor bn_g, bn_b;
    std::shared_ptr<BatchNormState> bn_state;

    void collect(const std::string& prefix, ParamList& out);
};

TdownParams make_tdown(int64_t channels, uint64_t seed, std::string_view name);

// [.., T, V, C] -> [.., ceil(T/2), V, C]
Tensor tdown(const Tensor& x, TdownParams& p, bool training);

int64_t tsmb_param_count(const BlockConfig& cfg,
                         const std::vector<PartitionSpec>& parts,
                         const StreamAblation& streams = {},
                         const PgmAblation& pgm_ab = {}, bool scan_1d = false);
int64_t tdown_param_count(int64_t channels);

}  // namespace skelmamba
