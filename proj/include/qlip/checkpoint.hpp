#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qlip/tensor.hpp"

namespace qlip {

enum class Dtype : uint8_t { f32 = 0, f64 = 1, i32 = 2 };

// One named array inside a checkpoint. Payload bytes are little-endian on
// disk; in memory the value lives in whichever vector matches `dtype`.
struct CheckpointRecord {
    std::string name;
    Dtype dtype = Dtype::f64;
    Shape dims;

    std::vector<float> f32;
    std::vector<double> f64;
    std::vector<int32_t> i32;

    int64_t numel() const { return shape_numel(dims); }
    Tensor as_tensor() const;  // f32 widens, f64 passes through; i32 rejected
    static CheckpointRecord from_tensor(std::string name, const Tensor& t);
    static CheckpointRecord from_i32(std::string name, Shape dims, std::vector<int32_t> v);
};

// Binary container: magic "QLPB", u16 version, then records until EOF.
// Round trips are bit-exact for every dtype.
class Checkpoint {
public:
    void put(CheckpointRecord rec);
    void put_tensor(const std::string& name, const Tensor& t);
    void put_i32(const std::string& name, Shape dims, std::vector<int32_t> v);
    void put_scalar(const std::string& name, double v);

    bool has(const std::string& name) const;
    const CheckpointRecord& get(const std::string& name) const;
    Tensor tensor(const std::string& name) const;
    std::vector<int32_t> i32(const std::string& name) const;
    double scalar(const std::string& name) const;

    const std::map<std::string, CheckpointRecord>& records() const { return records_; }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    static constexpr uint16_t kVersion = 1;

private:
    std::map<std::string, CheckpointRecord> records_;
};

}  // namespace qlip
