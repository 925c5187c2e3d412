#pragma once

#include <string>
#include <vector>

#include "skelmamba/tensor.hpp"

namespace skelmamba {

// Named trainable tensor. decay=false exempts it from weight decay
// (normalization gains/biases, partition tokens, fusion scalars).
struct ParamRef {
    std::string name;
    Tensor tensor;
    bool decay = true;
};

using ParamList = std::vector<ParamRef>;

inline void add_param(ParamList& out, const std::string& name, const Tensor& t,
                      bool decay = true) {
    out.push_back({name, t, decay});
}

inline int64_t total_elements(const ParamList& params) {
    int64_t n = 0;
    for (const ParamRef& p : params) n += p.tensor.numel();
    return n;
}

}  // namespace skelmamba
