#pragma once

#include <string>
#include <vector>

#include "skelmamba/blocks.hpp"

namespace skelmamba {

struct AblationConfig {
    StreamAblation streams;
    PgmAblation pgm;
    bool scan_1d = false;  // single-direction full-width scan per C2DSSM

    bool is_full() const {
        return streams.spatial && streams.temporal && streams.pgm &&
               pgm.use_partitions && pgm.use_tokens && pgm.learnable_fusion &&
               pgm.use_channel_attention && !scan_1d;
    }
};

struct ModelConfig {
    int64_t num_joints = 25;
    int64_t c_in = 3;
    int64_t channels = 96;       // C
    int64_t num_blocks = 8;      // L
    int64_t heads = 8;           // H
    int64_t num_classes = 4;
    int64_t t_in = 64;
    int64_t k_t = 7;
    int64_t state_size = 16;     // N
    int64_t ffn_ratio = 4;
    double ln_eps = 1e-5;
    std::vector<int64_t> tdown_after = {2, 4};  // block indices (0-based)
    std::vector<PartitionSpec> partitions;
    AblationConfig ablation;

    void validate() const;
    // T seen by block i after the downsampling schedule
    int64_t frames_at_block(int64_t i) const;
    int64_t frames_final() const;
};

struct ModelParams {
    ModelConfig cfg;
    Tensor emb_w1, emb_b1, emb_w2, emb_b2, emb_w3, emb_b3;
    Tensor token;  // [T_in, V, C]
    std::vector<TsmbParams> blocks;
    std::vector<TdownParams> tdowns;  // parallel to cfg.tdown_after
    Tensor cls_w, cls_b;

    ParamList parameters();
    std::vector<std::pair<std::string, std::vector<double>*>> buffers();
};

ModelParams build_model(const ModelConfig& cfg, uint64_t seed);

// x: [B, T, V, c_in] (or [T, V, c_in]) -> [B, C] embedding tokens added.
Tensor embed(const Tensor& x, const ModelParams& params);

// x: [B, T_in, V, c_in] -> logits [B, num_classes].
Tensor model_forward(const Tensor& x, ModelParams& params, bool training);

int64_t param_count(const ModelConfig& cfg);
int64_t flops_estimate(const ModelConfig& cfg);

// Versioned single-file checkpoint: magic "SKMB1", little-endian u64 header
// size, JSON header (config + class names + tensor manifest with byte
// offsets), then raw f64 payloads.
void save_checkpoint(const std::string& path, ModelParams& params,
                     const std::vector<std::string>& class_names);
ModelParams load_checkpoint(const std::string& path,
                            std::vector<std::string>* class_names = nullptr);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace skelmamba
