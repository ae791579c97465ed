#include "qlip/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace qlip {

namespace {

constexpr char kMagic[4] = {'Q', 'L', 'P', 'B'};

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    put_bytes(os, b, 2);
}

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 8);
}

bool get_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    return static_cast<size_t>(is.gcount()) == n;
}

uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    if (!get_bytes(is, b, 2)) throw std::runtime_error("checkpoint: truncated u16");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!get_bytes(is, b, 4)) throw std::runtime_error("checkpoint: truncated u32");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!get_bytes(is, b, 8)) throw std::runtime_error("checkpoint: truncated u64");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

Tensor CheckpointRecord::as_tensor() const {
    if (dtype == Dtype::i32)
        throw std::runtime_error("checkpoint: record '" + name + "' holds i32, not float data");
    Tensor t(dims);
    if (dtype == Dtype::f64) {
        t.data = f64;
    } else {
        for (size_t i = 0; i < f32.size(); ++i) t.data[i] = static_cast<double>(f32[i]);
    }
    return t;
}

CheckpointRecord CheckpointRecord::from_tensor(std::string name, const Tensor& t) {
    CheckpointRecord r;
    r.name = std::move(name);
    r.dtype = Dtype::f64;
    r.dims = t.shape;
    r.f64 = t.data;
    return r;
}

CheckpointRecord CheckpointRecord::from_i32(std::string name, Shape dims, std::vector<int32_t> v) {
    if (shape_numel(dims) != static_cast<int64_t>(v.size()))
        throw std::invalid_argument("checkpoint: i32 record size does not match dims");
    CheckpointRecord r;
    r.name = std::move(name);
    r.dtype = Dtype::i32;
    r.dims = std::move(dims);
    r.i32 = std::move(v);
    return r;
}

void Checkpoint::put(CheckpointRecord rec) {
    auto name = rec.name;
    records_[name] = std::move(rec);
}

void Checkpoint::put_tensor(const std::string& name, const Tensor& t) {
    put(CheckpointRecord::from_tensor(name, t));
}

void Checkpoint::put_i32(const std::string& name, Shape dims, std::vector<int32_t> v) {
    put(CheckpointRecord::from_i32(name, std::move(dims), std::move(v)));
}

void Checkpoint::put_scalar(const std::string& name, double v) {
    put_tensor(name, Tensor::scalar(v));
}

bool Checkpoint::has(const std::string& name) const { return records_.count(name) != 0; }

const CheckpointRecord& Checkpoint::get(const std::string& name) const {
    auto it = records_.find(name);
    if (it == records_.end())
        throw std::runtime_error("checkpoint: missing record '" + name + "'");
    return it->second;
}

Tensor Checkpoint::tensor(const std::string& name) const { return get(name).as_tensor(); }

std::vector<int32_t> Checkpoint::i32(const std::string& name) const {
    const auto& r = get(name);
    if (r.dtype != Dtype::i32)
        throw std::runtime_error("checkpoint: record '" + name + "' is not i32");
    return r.i32;
}

double Checkpoint::scalar(const std::string& name) const {
    const auto t = tensor(name);
    if (!t.is_scalar())
        throw std::runtime_error("checkpoint: record '" + name + "' is not a scalar");
    return t.data[0];
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    put_bytes(os, kMagic, 4);
    put_u16(os, kVersion);
    for (const auto& [name, rec] : records_) {
        if (name.size() > 0xffff) throw std::runtime_error("checkpoint: record name too long");
        put_u16(os, static_cast<uint16_t>(name.size()));
        put_bytes(os, name.data(), name.size());
        const uint8_t dt = static_cast<uint8_t>(rec.dtype);
        put_bytes(os, &dt, 1);
        const uint8_t rank = static_cast<uint8_t>(rec.dims.size());
        put_bytes(os, &rank, 1);
        for (int64_t d : rec.dims) put_u32(os, static_cast<uint32_t>(d));
        switch (rec.dtype) {
            case Dtype::f32:
                for (float v : rec.f32) {
                    uint32_t bits;
                    std::memcpy(&bits, &v, 4);
                    put_u32(os, bits);
                }
                break;
            case Dtype::f64:
                for (double v : rec.f64) {
                    uint64_t bits;
                    std::memcpy(&bits, &v, 8);
                    put_u64(os, bits);
                }
                break;
            case Dtype::i32:
                for (int32_t v : rec.i32) put_u32(os, static_cast<uint32_t>(v));
                break;
        }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    if (!get_bytes(is, magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    const uint16_t version = get_u16(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    while (true) {
        int peek = is.peek();
        if (peek == std::char_traits<char>::eof()) break;
        CheckpointRecord rec;
        const uint16_t name_len = get_u16(is);
        rec.name.resize(name_len);
        if (!get_bytes(is, rec.name.data(), name_len))
            throw std::runtime_error("checkpoint: truncated record name");
        uint8_t dt = 0, rank = 0;
        if (!get_bytes(is, &dt, 1) || !get_bytes(is, &rank, 1))
            throw std::runtime_error("checkpoint: truncated record header");
        if (dt > 2) throw std::runtime_error("checkpoint: unknown dtype in '" + rec.name + "'");
        rec.dtype = static_cast<Dtype>(dt);
        rec.dims.resize(rank);
        for (int i = 0; i < rank; ++i) rec.dims[i] = get_u32(is);
        const auto n = static_cast<size_t>(shape_numel(rec.dims));
        switch (rec.dtype) {
            case Dtype::f32:
                rec.f32.resize(n);
                for (size_t i = 0; i < n; ++i) {
                    const uint32_t bits = get_u32(is);
                    std::memcpy(&rec.f32[i], &bits, 4);
                }
                break;
            case Dtype::f64:
                rec.f64.resize(n);
                for (size_t i = 0; i < n; ++i) {
                    const uint64_t bits = get_u64(is);
                    std::memcpy(&rec.f64[i], &bits, 8);
                }
                break;
            case Dtype::i32:
                rec.i32.resize(n);
                for (size_t i = 0; i < n; ++i)
                    rec.i32[i] = static_cast<int32_t>(get_u32(is));
                break;
        }
        ck.put(std::move(rec));
    }
    return ck;
}

}  // namespace qlip
