#include "skelmamba/model.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace skelmamba {

using nlohmann::json;

void ModelConfig::validate() const {
    if (num_joints < 1 || c_in < 1 || num_classes < 2 || t_in < 1)
        throw ConfigError("model config: invalid joints/coords/classes/frames");
    if (num_blocks < 1) throw ConfigError("model config: need at least one block");
    int64_t prev = -1;
    for (int64_t i : tdown_after) {
        if (i <= prev || i >= num_blocks)
            throw ConfigError("model config: tdown_after must be strictly "
                              "increasing block indices below L");
        prev = i;
    }
    const int64_t want = int64_t(1) << tdown_after.size();
    if (t_in % want != 0)
        throw ConfigError("model config: T_in=" + std::to_string(t_in) +
                          " not divisible by 2^" +
                          std::to_string(tdown_after.size()));
    validate_partitions(partitions, num_joints);
    BlockConfig bc{channels, heads,     num_joints, t_in,
                   k_t,      state_size, ffn_ratio,  ln_eps};
    bc.validate();
}

int64_t ModelConfig::frames_at_block(int64_t i) const {
    int64_t t = t_in;
    for (int64_t d : tdown_after)
        if (d < i) t /= 2;
    return t;
}

int64_t ModelConfig::frames_final() const {
    int64_t t = t_in;
    for (size_t i = 0; i < tdown_after.size(); ++i) t /= 2;
    return t;
}

ParamList ModelParams::parameters() {
    ParamList out;
    add_param(out, "emb.w1", emb_w1);
    add_param(out, "emb.b1", emb_b1);
    add_param(out, "emb.w2", emb_w2);
    add_param(out, "emb.b2", emb_b2);
    add_param(out, "emb.w3", emb_w3);
    add_param(out, "emb.b3", emb_b3);
    add_param(out, "token", token, false);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect("tsmb" + std::to_string(i), out);
    for (size_t i = 0; i < tdowns.size(); ++i)
        tdowns[i].collect("tdown" + std::to_string(i), out);
    add_param(out, "cls.w", cls_w);
    add_param(out, "cls.b", cls_b);
    return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> ModelParams::buffers() {
    std::vector<std::pair<std::string, std::vector<double>*>> out;
    for (size_t i = 0; i < tdowns.size(); ++i) {
        out.push_back({"tdown" + std::to_string(i) + ".running_mean",
                       &tdowns[i].bn_state->running_mean});
        out.push_back({"tdown" + std::to_string(i) + ".running_var",
                       &tdowns[i].bn_state->running_var});
    }
    return out;
}

ModelParams build_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams m;
    m.cfg = cfg;
    const int64_t c = cfg.channels;
    {
        Rng rng = Rng::keyed(seed, "emb1");
        m.emb_w1 = kaiming_uniform({cfg.c_in, c}, cfg.c_in, rng);
        m.emb_b1 = Tensor::zeros({c}, true);
    }
    {
        Rng rng = Rng::keyed(seed, "emb2");
        m.emb_w2 = kaiming_uniform({c, c}, c, rng);
        m.emb_b2 = Tensor::zeros({c}, true);
    }
    {
        Rng rng = Rng::keyed(seed, "emb3");
        m.emb_w3 = kaiming_uniform({c, c}, c, rng);
        m.emb_b3 = Tensor::zeros({c}, true);
    }
    {
        Rng rng = Rng::keyed(seed, "token");
        m.token = randn({cfg.t_in, cfg.num_joints, c}, rng, 0.02, true);
    }
    for (int64_t i = 0; i < cfg.num_blocks; ++i) {
        BlockConfig bc{c,        cfg.heads,      cfg.num_joints,
                       cfg.frames_at_block(i),   cfg.k_t,
                       cfg.state_size,           cfg.ffn_ratio,
                       cfg.ln_eps};
        m.blocks.push_back(make_tsmb(bc, cfg.partitions, seed,
                                     "tsmb" + std::to_string(i),
                                     cfg.ablation.streams, cfg.ablation.pgm,
                                     cfg.ablation.scan_1d));
    }
    for (size_t i = 0; i < cfg.tdown_after.size(); ++i)
        m.tdowns.push_back(make_tdown(c, seed, "tdown" + std::to_string(i)));
    {
        Rng rng = Rng::keyed(seed, "cls");
        m.cls_w = kaiming_uniform({c, cfg.num_classes}, c, rng);
        m.cls_b = Tensor::zeros({cfg.num_classes}, true);
    }
    return m;
}

Tensor embed(const Tensor& x, const ModelParams& params) {
    if (!x.defined()) throw UsageError("embed: undefined input");
    const size_t r = x.shape().size();
    if (r != 3 && r != 4)
        throw ShapeError("embed: expected [..,T,V,c_in], got " +
                         shape_str(x.shape()));
    if (x.shape()[r - 3] != params.cfg.t_in)
        throw DomainError("embed: sequence has " +
                          std::to_string(x.shape()[r - 3]) + " frames, expected " +
                          std::to_string(params.cfg.t_in) +
                          "; resample before the forward pass");
    if (x.shape()[r - 2] != params.cfg.num_joints ||
        x.shape()[r - 1] != params.cfg.c_in)
        throw ShapeError("embed: expected trailing [V,c_in]=[" +
                         std::to_string(params.cfg.num_joints) + "," +
                         std::to_string(params.cfg.c_in) + "], got " +
                         shape_str(x.shape()));
    Tensor h = gelu(linear(x, params.emb_w1, params.emb_b1));
    h = gelu(linear(h, params.emb_w2, params.emb_b2));
    h = linear(h, params.emb_w3, params.emb_b3);
    return add(h, params.token);
}

Tensor model_forward(const Tensor& x, ModelParams& params, bool training) {
    Tensor h = embed(x, params);
    size_t next_tdown = 0;
    for (size_t i = 0; i < params.blocks.size(); ++i) {
        h = tsmb_forward(h, params.blocks[i]);
        if (!all_finite(h))
            throw NumericError("model_forward: nonfinite activation after block " +
                               std::to_string(i));
        if (next_tdown < params.cfg.tdown_after.size() &&
            params.cfg.tdown_after[next_tdown] == static_cast<int64_t>(i)) {
            h = tdown(h, params.tdowns[next_tdown], training);
            ++next_tdown;
        }
    }
    const int r = static_cast<int>(h.shape().size());
    Tensor pooled = (r == 4) ? mean_axes(h, {1, 2}) : mean_axes(h, {0, 1});
    return linear(pooled, params.cls_w, params.cls_b);
}

// ---- accounting ---------------------------------------------------------------

int64_t param_count(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t c = cfg.channels;
    int64_t n = cfg.c_in * c + c + 2 * (c * c + c);     // embedding stack
    n += cfg.t_in * cfg.num_joints * c;                 // time-space token
    for (int64_t i = 0; i < cfg.num_blocks; ++i) {
        BlockConfig bc{c,        cfg.heads,      cfg.num_joints,
                       cfg.frames_at_block(i),   cfg.k_t,
                       cfg.state_size,           cfg.ffn_ratio,
                       cfg.ln_eps};
        n += tsmb_param_count(bc, cfg.partitions, cfg.ablation.streams,
                              cfg.ablation.pgm, cfg.ablation.scan_1d);
    }
    n += static_cast<int64_t>(cfg.tdown_after.size()) * tdown_param_count(c);
    n += c * cfg.num_classes + cfg.num_classes;
    return n;
}

namespace {

// multiply-accumulates; exp/division counted once each inside the scan step
constexpr int64_t kScanMacsPerState = 7;

int64_t mamba_block_flops(int64_t len, int64_t d, int64_t n_state) {
    const int64_t di = kMambaExpand * d;
    int64_t f = len * d * 2 * di;                  // input projection
    f += len * di * kMambaConvWidth;               // depthwise conv
    f += 2 * len * di * n_state;                   // B, C projections
    f += len * di * di;                            // dt projection
    f += len * di * (kScanMacsPerState * n_state + 1);  // scan + skip
    f += len * di * d;                             // output projection
    return f;
}

int64_t c2dssm_flops(int64_t len, int64_t c, int64_t n_state, bool one_dir) {
    if (one_dir) return mamba_block_flops(len, c, n_state);
    return 4 * mamba_block_flops(len, c / 4, n_state);
}

}  // namespace

int64_t flops_estimate(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t c = cfg.channels;
    const int64_t v = cfg.num_joints;
    const int64_t h4 = cfg.heads / 4;
    int64_t f = cfg.t_in * v * (cfg.c_in * c + 2 * c * c);  // embedding
    for (int64_t i = 0; i < cfg.num_blocks; ++i) {
        const int64_t t = cfg.frames_at_block(i);
        const int64_t tokens = t * v;
        f += 2 * tokens * c * c;  // split/merge linears
        if (cfg.ablation.streams.spatial) f += t * v * v * (c / 4);
        if (cfg.ablation.streams.temporal)
            f += tokens * (c / 4) * ((c / 4) / h4) * cfg.k_t;
        if (cfg.ablation.streams.pgm) {
            const int64_t c_head = (c / 2) / h4;
            int64_t per_head = c2dssm_flops(tokens, c_head, cfg.state_size,
                                            cfg.ablation.scan_1d);  // global
            if (cfg.ablation.pgm.use_partitions) {
                for (const PartitionSpec& p : cfg.partitions)
                    per_head += c2dssm_flops(
                        t * static_cast<int64_t>(p.indices.size()), c_head,
                        cfg.state_size, cfg.ablation.scan_1d);
            }
            if (cfg.ablation.pgm.use_channel_attention) {
                const int64_t hidden =
                    std::max<int64_t>(1, c_head / kAttentionBottleneck);
                per_head += 2 * c_head * hidden;
            }
            f += h4 * per_head;
        }
        f += 2 * tokens * c * cfg.ffn_ratio * c;  // FFN
        for (int64_t d : cfg.tdown_after)
            if (d == i) f += (t / 2) * v * c * 3;  // strided depthwise conv
    }
    f += c * cfg.num_classes;
    return f;
}

// ---- config json ----------------------------------------------------------------

static json partitions_to_json(const std::vector<PartitionSpec>& parts) {
    json arr = json::array();
    for (const PartitionSpec& p : parts)
        arr.push_back({{"name", p.name}, {"indices", p.indices}});
    return arr;
}

static std::vector<PartitionSpec> partitions_from_json(const json& arr) {
    std::vector<PartitionSpec> parts;
    for (const json& e : arr) {
        PartitionSpec p;
        p.name = e.at("name").get<std::string>();
        p.indices = e.at("indices").get<std::vector<int64_t>>();
        parts.push_back(std::move(p));
    }
    return parts;
}

static json model_config_json(const ModelConfig& cfg) {
    json j;
    j["num_joints"] = cfg.num_joints;
    j["c_in"] = cfg.c_in;
    j["channels"] = cfg.channels;
    j["num_blocks"] = cfg.num_blocks;
    j["heads"] = cfg.heads;
    j["num_classes"] = cfg.num_classes;
    j["t_in"] = cfg.t_in;
    j["k_t"] = cfg.k_t;
    j["state_size"] = cfg.state_size;
    j["ffn_ratio"] = cfg.ffn_ratio;
    j["ln_eps"] = cfg.ln_eps;
    j["tdown_after"] = cfg.tdown_after;
    j["partitions"] = partitions_to_json(cfg.partitions);
    j["ablation"] = {
        {"spatial", cfg.ablation.streams.spatial},
        {"temporal", cfg.ablation.streams.temporal},
        {"pgm", cfg.ablation.streams.pgm},
        {"scan_1d", cfg.ablation.scan_1d},
        {"use_partitions", cfg.ablation.pgm.use_partitions},
        {"use_tokens", cfg.ablation.pgm.use_tokens},
        {"learnable_fusion", cfg.ablation.pgm.learnable_fusion},
        {"use_channel_attention", cfg.ablation.pgm.use_channel_attention},
    };
    return j;
}

static ModelConfig model_config_parse(const json& j) {
    ModelConfig cfg;
    try {
        cfg.num_joints = j.at("num_joints").get<int64_t>();
        cfg.c_in = j.value("c_in", int64_t{3});
        cfg.channels = j.at("channels").get<int64_t>();
        cfg.num_blocks = j.at("num_blocks").get<int64_t>();
        cfg.heads = j.at("heads").get<int64_t>();
        cfg.num_classes = j.at("num_classes").get<int64_t>();
        cfg.t_in = j.value("t_in", int64_t{64});
        cfg.k_t = j.value("k_t", int64_t{7});
        cfg.state_size = j.value("state_size", int64_t{16});
        cfg.ffn_ratio = j.value("ffn_ratio", int64_t{4});
        cfg.ln_eps = j.value("ln_eps", 1e-5);
        cfg.tdown_after = j.value("tdown_after", std::vector<int64_t>{});
        cfg.partitions = partitions_from_json(j.at("partitions"));
        if (j.contains("ablation")) {
            const json& a = j.at("ablation");
            cfg.ablation.streams.spatial = a.value("spatial", true);
            cfg.ablation.streams.temporal = a.value("temporal", true);
            cfg.ablation.streams.pgm = a.value("pgm", true);
            cfg.ablation.scan_1d = a.value("scan_1d", false);
            cfg.ablation.pgm.use_partitions = a.value("use_partitions", true);
            cfg.ablation.pgm.use_tokens = a.value("use_tokens", true);
            cfg.ablation.pgm.learnable_fusion = a.value("learnable_fusion", true);
            cfg.ablation.pgm.use_channel_attention =
                a.value("use_channel_attention", true);
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("model config: ") + e.what());
    }
    return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    return model_config_json(cfg).dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    return model_config_parse(j);
}

// ---- checkpoint -----------------------------------------------------------------

static constexpr char kMagic[5] = {'S', 'K', 'M', 'B', '1'};

void save_checkpoint(const std::string& path, ModelParams& params,
                     const std::vector<std::string>& class_names) {
    ParamList plist = params.parameters();
    auto bufs = params.buffers();
    json manifest = json::array();
    int64_t offset = 0;
    for (const ParamRef& p : plist) {
        manifest.push_back({{"name", p.name},
                            {"shape", p.tensor.shape()},
                            {"dtype", "f64"},
                            {"offset", offset}});
        offset += p.tensor.numel() * 8;
    }
    for (auto& [name, vec] : bufs) {
        manifest.push_back({{"name", name},
                            {"shape", Shape{static_cast<int64_t>(vec->size())}},
                            {"dtype", "f64"},
                            {"offset", offset}});
        offset += static_cast<int64_t>(vec->size()) * 8;
    }
    json header;
    header["format"] = 1;
    header["config"] = model_config_json(params.cfg);
    header["classes"] = class_names;
    header["tensors"] = manifest;
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 5);
    const uint64_t hlen = head.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const ParamRef& p : plist)
        out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                  static_cast<std::streamsize>(p.tensor.numel() * 8));
    for (auto& [name, vec] : bufs)
        out.write(reinterpret_cast<const char*>(vec->data()),
                  static_cast<std::streamsize>(vec->size() * 8));
    if (!out) throw Error("checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path,
                            std::vector<std::string>* class_names) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kMagic, 5) != 0)
        throw ParseError("checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string head(hlen, '\0');
    in.read(head.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ParseError("checkpoint: truncated header in " + path);
    json header;
    try {
        header = json::parse(head);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what());
    }
    ModelConfig cfg = model_config_parse(header.at("config"));
    if (class_names)
        *class_names = header.value("classes", std::vector<std::string>{});
    ModelParams params = build_model(cfg, 0);

    const std::streampos payload_start = in.tellg();
    ParamList plist = params.parameters();
    auto bufs = params.buffers();
    auto read_into = [&](const json& entry, double* dst, int64_t n) {
        const int64_t off = entry.at("offset").get<int64_t>();
        in.seekg(payload_start + std::streampos(off));
        in.read(reinterpret_cast<char*>(dst),
                static_cast<std::streamsize>(n * 8));
        if (!in) throw ParseError("checkpoint: truncated payload in " + path);
    };
    for (const json& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        bool found = false;
        for (ParamRef& p : plist) {
            if (p.name != name) continue;
            const Shape shape = entry.at("shape").get<Shape>();
            if (shape != p.tensor.shape())
                throw SchemaError("checkpoint: shape mismatch for " + name);
            read_into(entry, p.tensor.mutable_data().data(), p.tensor.numel());
            found = true;
            break;
        }
        if (found) continue;
        for (auto& [bname, vec] : bufs) {
            if (bname != name) continue;
            read_into(entry, vec->data(), static_cast<int64_t>(vec->size()));
            found = true;
            break;
        }
        if (!found)
            throw SchemaError("checkpoint: unknown tensor '" + name + "'");
    }
    return params;
}

}  // namespace skelmamba
