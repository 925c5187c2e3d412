#include "skelmamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace skelmamba {

using nlohmann::json;

void SkeletonTopology::validate() const {
    if (num_joints < 1) throw SchemaError("topology: need at least one joint");
    if (static_cast<int64_t>(parents.size()) != num_joints)
        throw SchemaError("topology: parents list must have one entry per joint");
    for (int64_t j = 0; j < num_joints; ++j) {
        if (parents[j] < 0 || parents[j] >= num_joints)
            throw SchemaError("topology: parent of joint " + std::to_string(j) +
                              " out of range");
        // walk to a root; cycles would loop longer than the joint count
        int64_t cur = j;
        int64_t steps = 0;
        while (parents[cur] != cur) {
            cur = parents[cur];
            if (++steps > num_joints)
                throw SchemaError("topology: parent graph has a cycle at joint " +
                                  std::to_string(j));
        }
    }
    for (const auto& [name, idx] : groups)
        for (int64_t j : idx)
            if (j < 0 || j >= num_joints)
                throw SchemaError("topology: group '" + name +
                                  "' references joint " + std::to_string(j));
}

int64_t SkeletonTopology::root() const {
    for (int64_t j = 0; j < num_joints; ++j)
        if (parents[j] == j) return j;
    throw SchemaError("topology: no root joint");
}

SkeletonTopology ntu25_topology() {
    SkeletonTopology t;
    t.num_joints = 25;
    t.parents = {0, 0,  20, 2, 20, 4,  5,  6,  20, 8,  9,  10, 0,
                 12, 13, 14, 0, 16, 17, 18, 1,  7,  7,  11, 11};
    t.groups["arms"] = {4, 5, 6, 7, 21, 22, 8, 9, 10, 11, 23, 24};
    t.groups["legs"] = {12, 13, 14, 15, 16, 17, 18, 19};
    t.groups["torso"] = {0, 1, 20, 2, 3};
    t.scale_a = 0;
    t.scale_b = 20;
    t.validate();
    return t;
}

std::vector<PartitionSpec> default_partitions(const SkeletonTopology& topo) {
    auto group = [&](const std::string& name) {
        auto it = topo.groups.find(name);
        if (it == topo.groups.end())
            throw ConfigError("default partitions: topology lacks group '" + name +
                              "'");
        return it->second;
    };
    const auto arms = group("arms");
    const auto legs = group("legs");
    const auto torso = group("torso");
    auto join = [](const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
        std::vector<int64_t> out = a;
        out.insert(out.end(), b.begin(), b.end());
        return out;
    };
    std::vector<PartitionSpec> parts;
    parts.push_back({"arms", arms});
    parts.push_back({"legs", legs});
    parts.push_back({"torso", torso});
    parts.push_back({"arms-legs", join(arms, legs)});
    parts.push_back({"arms-torso", join(arms, torso)});
    parts.push_back({"torso-legs", join(torso, legs)});
    validate_partitions(parts, topo.num_joints);
    return parts;
}

// ---- dataset file ---------------------------------------------------------------

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("dataset: cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("dataset " + path + ": parse error at byte " +
                         std::to_string(e.byte) + ": " + e.what());
    }
    Dataset ds;
    try {
        if (j.at("version").get<int>() != 1)
            throw SchemaError("dataset: unsupported version");
        const json& topo = j.at("topology");
        ds.topology.num_joints = topo.at("num_joints").get<int64_t>();
        ds.topology.parents = topo.at("parents").get<std::vector<int64_t>>();
        if (topo.contains("groups"))
            for (auto it = topo.at("groups").begin(); it != topo.at("groups").end();
                 ++it)
                ds.topology.groups[it.key()] =
                    it.value().get<std::vector<int64_t>>();
        if (topo.contains("scale_pair")) {
            auto sp = topo.at("scale_pair").get<std::vector<int64_t>>();
            if (sp.size() == 2) {
                ds.topology.scale_a = sp[0];
                ds.topology.scale_b = sp[1];
            }
        }
        ds.topology.validate();
        ds.classes = j.at("classes").get<std::vector<std::string>>();
        const int64_t v = ds.topology.num_joints;
        for (const json& s : j.at("samples")) {
            SkeletonSequence seq;
            seq.id = s.at("id").get<std::string>();
            seq.label = s.at("label").get<int64_t>();
            if (seq.label < 0 ||
                seq.label >= static_cast<int64_t>(ds.classes.size()))
                throw SchemaError("dataset: sample '" + seq.id + "' has label " +
                                  std::to_string(seq.label) + " but only " +
                                  std::to_string(ds.classes.size()) + " classes");
            const json& frames = s.at("frames");
            seq.t = static_cast<int64_t>(frames.size());
            seq.v = v;
            if (seq.t < 2)
                throw SchemaError("dataset: sample '" + seq.id +
                                  "' has fewer than 2 frames");
            seq.frames.reserve(seq.t * v * 3);
            for (const json& frame : frames) {
                if (static_cast<int64_t>(frame.size()) != v)
                    throw SchemaError("dataset: sample '" + seq.id +
                                      "' frame with wrong joint count");
                for (const json& joint : frame) {
                    if (joint.size() != 3)
                        throw SchemaError("dataset: joint coordinate triple "
                                          "expected in sample '" + seq.id + "'");
                    for (const json& c : joint) {
                        const double x = c.get<double>();
                        if (!std::isfinite(x))
                            throw SchemaError("dataset: nonfinite coordinate in "
                                              "sample '" + seq.id + "'");
                        seq.frames.push_back(x);
                    }
                }
            }
            ds.samples.push_back(std::move(seq));
        }
    } catch (const json::exception& e) {
        throw SchemaError("dataset " + path + ": " + e.what());
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    json topo;
    topo["num_joints"] = ds.topology.num_joints;
    topo["parents"] = ds.topology.parents;
    json groups = json::object();
    for (const auto& [name, idx] : ds.topology.groups) groups[name] = idx;
    topo["groups"] = groups;
    if (ds.topology.scale_a >= 0)
        topo["scale_pair"] = {ds.topology.scale_a, ds.topology.scale_b};
    json samples = json::array();
    for (const SkeletonSequence& s : ds.samples) {
        json frames = json::array();
        for (int64_t t = 0; t < s.t; ++t) {
            json frame = json::array();
            for (int64_t jnt = 0; jnt < s.v; ++jnt)
                frame.push_back({s.at(t, jnt, 0), s.at(t, jnt, 1), s.at(t, jnt, 2)});
            frames.push_back(std::move(frame));
        }
        samples.push_back({{"id", s.id}, {"label", s.label},
                           {"frames", std::move(frames)}});
    }
    json j;
    j["version"] = 1;
    j["topology"] = topo;
    j["classes"] = ds.classes;
    j["samples"] = samples;
    std::ofstream out(path);
    if (!out) throw Error("dataset: cannot open " + path + " for writing");
    out << j.dump() << "\n";
    if (!out) throw Error("dataset: write failed for " + path);
}

// ---- preprocessing ---------------------------------------------------------------

namespace {

SkeletonSequence interp_window(const SkeletonSequence& seq, int64_t start,
                               int64_t window, int64_t t_target) {
    SkeletonSequence out;
    out.id = seq.id;
    out.label = seq.label;
    out.v = seq.v;
    out.t = t_target;
    out.frames.resize(t_target * seq.v * 3);
    const int64_t stride = seq.v * 3;
    for (int64_t i = 0; i < t_target; ++i) {
        const double pos =
            (t_target == 1)
                ? 0.0
                : static_cast<double>(i) * static_cast<double>(window - 1) /
                      static_cast<double>(t_target - 1);
        const int64_t lo = std::min<int64_t>(static_cast<int64_t>(pos), window - 1);
        const int64_t hi = std::min<int64_t>(lo + 1, window - 1);
        const double f = pos - static_cast<double>(lo);
        const double* a = seq.frames.data() + (start + lo) * stride;
        const double* b = seq.frames.data() + (start + hi) * stride;
        double* dst = out.frames.data() + i * stride;
        if (f == 0.0) {
            std::copy(a, a + stride, dst);
        } else {
            for (int64_t k = 0; k < stride; ++k)
                dst[k] = (1.0 - f) * a[k] + f * b[k];
        }
    }
    return out;
}

}  // namespace

SkeletonSequence resample(const SkeletonSequence& seq, int64_t t_target,
                          Rng* rng) {
    if (seq.t < 2) throw DomainError("resample: need at least 2 frames");
    if (t_target < 1) throw DomainError("resample: target length must be >= 1");
    if (!rng) {
        if (seq.t == t_target) return seq;
        return interp_window(seq, 0, seq.t, t_target);
    }
    // augmentation: crop a random window, then stretch it to the target
    const double frac = rng->uniform(0.7, 1.0);
    int64_t window = std::max<int64_t>(
        2, static_cast<int64_t>(std::lround(frac * static_cast<double>(seq.t))));
    window = std::min(window, seq.t);
    const int64_t start = rng->uniform_int(seq.t - window + 1);
    return interp_window(seq, start, window, t_target);
}

std::vector<double> derive_bones(const SkeletonSequence& seq,
                                 const SkeletonTopology& topo) {
    topo.validate();
    if (seq.v != topo.num_joints)
        throw ShapeError("derive_bones: sequence has " + std::to_string(seq.v) +
                         " joints, topology " + std::to_string(topo.num_joints));
    std::vector<double> bones(seq.frames.size(), 0.0);
    for (int64_t t = 0; t < seq.t; ++t) {
        for (int64_t j = 0; j < seq.v; ++j) {
            const int64_t p = topo.parents[j];
            if (p == j) continue;
            for (int64_t c = 0; c < 3; ++c)
                bones[(t * seq.v + j) * 3 + c] = seq.at(t, j, c) - seq.at(t, p, c);
        }
    }
    return bones;
}

std::vector<double> derive_motion(const std::vector<double>& frames, int64_t t,
                                  int64_t v) {
    std::vector<double> motion(frames.size(), 0.0);
    const int64_t stride = v * 3;
    for (int64_t i = 0; i + 1 < t; ++i)
        for (int64_t k = 0; k < stride; ++k)
            motion[i * stride + k] = frames[(i + 1) * stride + k] -
                                     frames[i * stride + k];
    return motion;
}

void normalize_sequence(SkeletonSequence& seq, const SkeletonTopology& topo) {
    const int64_t root = topo.root();
    const double cx = seq.at(0, root, 0);
    const double cy = seq.at(0, root, 1);
    const double cz = seq.at(0, root, 2);
    std::vector<double> lengths;
    if (topo.scale_a >= 0 && topo.scale_b >= 0 && topo.scale_a < seq.v &&
        topo.scale_b < seq.v) {
        lengths.reserve(seq.t);
        for (int64_t t = 0; t < seq.t; ++t) {
            const double dx = seq.at(t, topo.scale_a, 0) - seq.at(t, topo.scale_b, 0);
            const double dy = seq.at(t, topo.scale_a, 1) - seq.at(t, topo.scale_b, 1);
            const double dz = seq.at(t, topo.scale_a, 2) - seq.at(t, topo.scale_b, 2);
            lengths.push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
        }
    } else {
        lengths.reserve(seq.t * seq.v);
        for (int64_t t = 0; t < seq.t; ++t)
            for (int64_t j = 0; j < seq.v; ++j) {
                const double dx = seq.at(t, j, 0) - seq.at(t, root, 0);
                const double dy = seq.at(t, j, 1) - seq.at(t, root, 1);
                const double dz = seq.at(t, j, 2) - seq.at(t, root, 2);
                lengths.push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
            }
    }
    std::nth_element(lengths.begin(), lengths.begin() + lengths.size() / 2,
                     lengths.end());
    const double scale = std::max(lengths[lengths.size() / 2], 1e-8);
    for (int64_t t = 0; t < seq.t; ++t)
        for (int64_t j = 0; j < seq.v; ++j) {
            seq.at(t, j, 0) = (seq.at(t, j, 0) - cx) / scale;
            seq.at(t, j, 1) = (seq.at(t, j, 1) - cy) / scale;
            seq.at(t, j, 2) = (seq.at(t, j, 2) - cz) / scale;
        }
}

Modality modality_from_char(char c) {
    switch (c) {
        case 'j': return Modality::Joints;
        case 'b': return Modality::Bones;
        case 'm': return Modality::Motion;
        default:
            throw UsageError(std::string("unknown modality '") + c +
                             "' (expected j, b or m)");
    }
}

std::string modality_name(Modality m) {
    switch (m) {
        case Modality::Joints: return "joints";
        case Modality::Bones: return "bones";
        case Modality::Motion: return "motion";
    }
    return "?";
}

std::vector<double> modality_frames(const SkeletonSequence& seq,
                                    const SkeletonTopology& topo, Modality m) {
    switch (m) {
        case Modality::Joints: return seq.frames;
        case Modality::Bones: return derive_bones(seq, topo);
        case Modality::Motion: return derive_motion(seq.frames, seq.t, seq.v);
    }
    throw UsageError("modality_frames: bad modality");
}

// ---- synthetic gait --------------------------------------------------------------

namespace {

struct Vec3 {
    double x, y, z;
};

const Vec3 kBasePose[25] = {
    {0.00, 1.00, 0.0},   // spine base
    {0.00, 1.25, 0.0},   // spine mid
    {0.00, 1.55, 0.0},   // neck
    {0.00, 1.70, 0.0},   // head
    {-0.20, 1.45, 0.0},  // shoulder l
    {-0.25, 1.20, 0.0},  // elbow l
    {-0.27, 0.95, 0.0},  // wrist l
    {-0.28, 0.88, 0.0},  // hand l
    {0.20, 1.45, 0.0},   // shoulder r
    {0.25, 1.20, 0.0},   // elbow r
    {0.27, 0.95, 0.0},   // wrist r
    {0.28, 0.88, 0.0},   // hand r
    {-0.10, 0.95, 0.0},  // hip l
    {-0.10, 0.50, 0.0},  // knee l
    {-0.10, 0.10, 0.0},  // ankle l
    {-0.10, 0.03, 0.12}, // foot l
    {0.10, 0.95, 0.0},   // hip r
    {0.10, 0.50, 0.0},   // knee r
    {0.10, 0.10, 0.0},   // ankle r
    {0.10, 0.03, 0.12},  // foot r
    {0.00, 1.40, 0.0},   // spine shoulder
    {-0.29, 0.82, 0.0},  // handtip l
    {-0.26, 0.86, 0.0},  // thumb l
    {0.29, 0.82, 0.0},   // handtip r
    {0.26, 0.86, 0.0},   // thumb r
};

struct GaitClass {
    const char* name;
    double arm_amp;
    double stride_l, stride_r;
    double tremor_amp;
};

const GaitClass kGaitClasses[4] = {
    {"normal", 0.30, 0.25, 0.25, 0.0},
    {"reduced-arm-swing", 0.09, 0.25, 0.25, 0.0},
    {"asymmetric-stride", 0.30, 0.32, 0.13, 0.0},
    {"high-frequency-tremor", 0.30, 0.25, 0.25, 0.05},
};

constexpr int64_t kLeftLeg[3] = {13, 14, 15};   // knee, ankle, foot
constexpr int64_t kRightLeg[3] = {17, 18, 19};
constexpr int64_t kLeftArm[5] = {5, 6, 7, 21, 22};   // elbow..thumb
constexpr int64_t kRightArm[5] = {9, 10, 11, 23, 24};
constexpr int64_t kTorso[5] = {0, 1, 2, 3, 20};
constexpr int64_t kTremorJoints[8] = {6, 7, 21, 22, 10, 11, 23, 24};

}  // namespace

Dataset synth_generate(const SynthSpec& spec) {
    if (spec.num_classes < 1 || spec.num_classes > 4)
        throw ConfigError("synth: class count must be in [1,4], got " +
                          std::to_string(spec.num_classes));
    if (spec.per_class < 1 || spec.frames < 2)
        throw ConfigError("synth: need per_class >= 1 and frames >= 2");
    Dataset ds;
    ds.topology = ntu25_topology();
    for (int64_t c = 0; c < spec.num_classes; ++c)
        ds.classes.push_back(kGaitClasses[c].name);
    const int64_t T = spec.frames;
    for (int64_t c = 0; c < spec.num_classes; ++c) {
        const GaitClass& gc = kGaitClasses[c];
        for (int64_t s = 0; s < spec.per_class; ++s) {
            const int64_t sid = spec.id_offset + s;
            Rng rng = Rng::keyed(spec.seed, static_cast<uint64_t>(c),
                                 static_cast<uint64_t>(sid));
            const double cycles = rng.uniform(1.6, 2.4);
            const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
            const double arm_amp = gc.arm_amp * rng.uniform(0.9, 1.1);
            const double stride_l = gc.stride_l * rng.uniform(0.9, 1.1);
            const double stride_r = gc.stride_r * rng.uniform(0.9, 1.1);
            const double tremor_amp = gc.tremor_amp * rng.uniform(0.9, 1.1);
            const double tremor_cycles = rng.uniform(18.0, 22.0);
            const double tremor_phase = rng.uniform(0.0, 2.0 * M_PI);

            SkeletonSequence seq;
            seq.id = "synth-c" + std::to_string(c) + "-" + std::to_string(sid);
            seq.label = c;
            seq.t = T;
            seq.v = 25;
            seq.frames.resize(T * 25 * 3);
            for (int64_t t = 0; t < T; ++t) {
                const double th =
                    2.0 * M_PI * cycles * static_cast<double>(t) /
                        static_cast<double>(T) + phase0;
                Vec3 pose[25];
                std::copy(std::begin(kBasePose), std::end(kBasePose), pose);
                // legs: alternating stride along z with a lift on the swing side
                auto swing_leg = [&](const int64_t* joints, double amp,
                                     double phase) {
                    const double s_z = std::sin(th + phase);
                    const double lift = std::max(0.0, std::sin(th + phase));
                    pose[joints[0]].z += 0.5 * amp * s_z;
                    pose[joints[1]].z += amp * s_z;
                    pose[joints[2]].z += amp * s_z;
                    pose[joints[1]].y += 0.30 * amp * lift;
                    pose[joints[2]].y += 0.30 * amp * lift;
                };
                swing_leg(kLeftLeg, stride_l, 0.0);
                swing_leg(kRightLeg, stride_r, M_PI);
                // arms counter-swing their side's leg
                auto swing_arm = [&](const int64_t* joints, double phase) {
                    const double s_z = std::sin(th + phase);
                    pose[joints[0]].z += 0.5 * arm_amp * s_z;
                    for (int k = 1; k < 5; ++k)
                        pose[joints[k]].z += arm_amp * s_z;
                };
                swing_arm(kLeftArm, M_PI);
                swing_arm(kRightArm, 0.0);
                // torso bob and sway
                for (int64_t j : kTorso) {
                    pose[j].y += 0.02 * std::sin(2.0 * th);
                    pose[j].x += 0.015 * std::sin(th);
                }
                if (tremor_amp > 0.0) {
                    const double tt =
                        2.0 * M_PI * tremor_cycles * static_cast<double>(t) /
                            static_cast<double>(T) + tremor_phase;
                    for (size_t k = 0; k < 8; ++k) {
                        pose[kTremorJoints[k]].x +=
                            tremor_amp * std::sin(tt + 0.7 * static_cast<double>(k));
                        pose[kTremorJoints[k]].z +=
                            tremor_amp * std::cos(tt + 0.7 * static_cast<double>(k));
                    }
                }
                for (int64_t j = 0; j < 25; ++j) {
                    seq.at(t, j, 0) = pose[j].x + 0.008 * rng.normal();
                    seq.at(t, j, 1) = pose[j].y + 0.008 * rng.normal();
                    seq.at(t, j, 2) = pose[j].z + 0.008 * rng.normal();
                }
            }
            ds.samples.push_back(std::move(seq));
        }
    }
    return ds;
}

Tensor ensemble(const std::vector<Tensor>& scores) {
    if (scores.empty()) throw UsageError("ensemble: empty score list");
    const Shape shape = scores[0].shape();
    if (shape.size() != 2)
        throw ShapeError("ensemble: scores must be [B,K], got " +
                         shape_str(shape));
    for (const Tensor& s : scores)
        if (s.shape() != shape)
            throw ShapeError("ensemble: score shape mismatch: " +
                             shape_str(s.shape()) + " vs " + shape_str(shape));
    NoGradGuard ng;
    Tensor acc = scores[0];
    for (size_t i = 1; i < scores.size(); ++i) acc = add(acc, scores[i]);
    return scale(acc, 1.0 / static_cast<double>(scores.size()));
}

}  // namespace skelmamba
