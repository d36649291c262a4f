#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nrtr/tensor.hpp"

namespace nrtr {

/// A named, trainable tensor. The group label selects the learning rate
/// ("backbone" vs "transformer").
template <typename T>
struct Parameter {
    std::string name;
    std::string group;
    Tensor<T> tensor;
};

/// One record of the parameter store file.
struct ParamRecord {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Binary container: magic "NRTP", version byte 1, little-endian u32 record
/// count, then per record u16 name length + name, u8 rank, u32 dims and
/// f32 values.
void write_param_store(const std::string& path, const std::vector<ParamRecord>& records);
std::vector<ParamRecord> read_param_store(const std::string& path);

}  // namespace nrtr
