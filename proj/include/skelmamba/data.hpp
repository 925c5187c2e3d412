#pragma once

#include <map>
#include <string>
#include <vector>

#include "skelmamba/partgroup.hpp"
#include "skelmamba/tensor.hpp"

namespace skelmamba {

struct SkeletonTopology {
    int64_t num_joints = 0;
    std::vector<int64_t> parents;  // root points to itself
    std::map<std::string, std::vector<int64_t>> groups;
    // joint pair whose distance sets the scale unit (spine for the 25-joint
    // layout); -1 falls back to mean root distance
    int64_t scale_a = -1, scale_b = -1;

    void validate() const;
    int64_t root() const;
};

struct SkeletonSequence {
    std::string id;
    int64_t label = 0;
    int64_t t = 0, v = 0;
    std::vector<double> frames;  // [T, V, 3]

    double& at(int64_t ti, int64_t j, int64_t c) {
        return frames[(ti * v + j) * 3 + c];
    }
    double at(int64_t ti, int64_t j, int64_t c) const {
        return frames[(ti * v + j) * 3 + c];
    }
};

struct Dataset {
    SkeletonTopology topology;
    std::vector<std::string> classes;
    std::vector<SkeletonSequence> samples;
};

// Kinect-style 25-joint body with named arm/leg/torso groups.
SkeletonTopology ntu25_topology();
// arms, legs, torso plus their three pairwise unions.
std::vector<PartitionSpec> default_partitions(const SkeletonTopology& topo);

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// Linear temporal interpolation to exactly t_target frames. Eval mode
// (rng == nullptr) samples uniformly and keeps the endpoints; train mode
// crops a random window first.
SkeletonSequence resample(const SkeletonSequence& seq, int64_t t_target,
                          Rng* rng = nullptr);

// bones[t,j] = joint[t,j] - joint[t,parent(j)], root bone zero.
std::vector<double> derive_bones(const SkeletonSequence& seq,
                                 const SkeletonTopology& topo);
// motion[t] = x[t+1] - x[t], last frame zero.
std::vector<double> derive_motion(const std::vector<double>& frames, int64_t t,
                                  int64_t v);

// Center on the first frame's root joint, scale by the median spine length.
void normalize_sequence(SkeletonSequence& seq, const SkeletonTopology& topo);

enum class Modality { Joints, Bones, Motion };
Modality modality_from_char(char c);
std::string modality_name(Modality m);

// [T,V,3] input representation for one modality, after normalization.
std::vector<double> modality_frames(const SkeletonSequence& seq,
                                    const SkeletonTopology& topo, Modality m);

struct SynthSpec {
    int64_t num_classes = 4;
    int64_t per_class = 50;
    uint64_t seed = 0;
    int64_t frames = 64;
    int64_t id_offset = 0;  // continue sample ids (disjoint noise streams)
};

// Deterministic kinematic walker on the 25-joint body. Classes: normal,
// reduced-arm-swing, asymmetric-stride, high-frequency-tremor.
Dataset synth_generate(const SynthSpec& spec);

// Arithmetic mean of probability rows.
Tensor ensemble(const std::vector<Tensor>& scores);

}  // namespace skelmamba
