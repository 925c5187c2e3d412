#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "skelmamba/ssm.hpp"
#include "skelmamba/tensor.hpp"

namespace skelmamba {

// Bijective flattenings of the (T, V) grid. TtoS walks time-outer/joint-inner
// (row major), StoT joint-outer/time-inner; the _rev members reverse the full
// flat sequence.
enum class ScanDirection { TtoS, StoT, TtoS_rev, StoT_rev };

constexpr std::array<ScanDirection, 4> kScanDirections = {
    ScanDirection::TtoS, ScanDirection::StoT, ScanDirection::TtoS_rev,
    ScanDirection::StoT_rev};

// Permutation of T*V flat (row major t,v) indices in scan order.
std::vector<int64_t> flatten_order(int64_t t, int64_t v, ScanDirection dir);

// Contiguous channel quarters of x[.., T, V, C], order preserved.
std::vector<Tensor> split4(const Tensor& x);

// One full selective-SSM block per scan direction: input projection with
// expansion, depthwise causal sequence conv, SiLU gate, selective scan,
// output projection.
struct MambaBlockParams {
    int64_t d = 0;        // block channels
    int64_t d_inner = 0;  // expanded channels
    Tensor w_in;          // [d, 2*d_inner] (signal | gate)
    Tensor conv_w;        // [d_inner, 1, conv_k] depthwise
    Tensor conv_b;        // [d_inner]
    SelectiveScanWeights scan;
    Tensor w_out;         // [d_inner, d]

    void collect(const std::string& prefix, ParamList& out);
};

MambaBlockParams make_mamba_block(int64_t d, int64_t n, uint64_t seed,
                                  std::string_view name);

// x: [L, d] or [B, L, d] -> same shape.
Tensor mamba_block_forward(const Tensor& x, const MambaBlockParams& p);

struct C2dSsmParams {
    bool one_directional = false;          // ablation: single full-width block
    std::vector<MambaBlockParams> blocks;  // 4 direction blocks (or 1)

    void collect(const std::string& prefix, ParamList& out);
};

C2dSsmParams make_c2dssm(int64_t c, int64_t n, uint64_t seed,
                         std::string_view name, bool one_directional = false);

// x: [T, V, C] or [B, T, V, C] -> same shape; C divisible by 4.
Tensor c2dssm_forward(const Tensor& x, const C2dSsmParams& p);

constexpr int64_t kMambaExpand = 2;
constexpr int64_t kMambaConvWidth = 4;

int64_t mamba_block_param_count(int64_t d, int64_t n);
int64_t c2dssm_param_count(int64_t c, int64_t n, bool one_directional = false);

}  // namespace skelmamba
