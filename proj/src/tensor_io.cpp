#include "dppn/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace dppn {

namespace {
constexpr char kMagic[4] = {'D', 'P', 'T', '1'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint32_t kRank = 4;
} // namespace

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in)
        throw DecodeError("dpt1: truncated stream");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& in) {
    const std::uint32_t bits = read_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void dpt1_encode(std::ostream& out, const Tensor4& t) {
    out.write(kMagic, 4);
    out.put(static_cast<char>(kDtypeF32));
    write_u32(out, kRank);
    write_u32(out, static_cast<std::uint32_t>(t.n()));
    write_u32(out, static_cast<std::uint32_t>(t.c()));
    write_u32(out, static_cast<std::uint32_t>(t.h()));
    write_u32(out, static_cast<std::uint32_t>(t.w()));
    for (float v : t.flat())
        write_f32(out, v);
}

Tensor4 dpt1_decode(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DecodeError("dpt1: bad magic");
    const int dtype = in.get();
    if (dtype != kDtypeF32)
        throw DecodeError("dpt1: unsupported dtype code");
    const std::uint32_t rank = read_u32(in);
    if (rank != kRank)
        throw DecodeError("dpt1: unsupported rank");
    std::uint32_t dims[kRank];
    std::uint64_t total = 1;
    for (std::uint32_t i = 0; i < kRank; ++i) {
        dims[i] = read_u32(in);
        if (dims[i] == 0)
            throw DecodeError("dpt1: zero dimension");
        total *= dims[i];
        if (total > (std::numeric_limits<std::uint32_t>::max)())
            throw DecodeError("dpt1: dimension overflow");
    }
    std::vector<float> data(static_cast<std::size_t>(total));
    for (float& v : data)
        v = read_f32(in);
    return Tensor4::from_data(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                              static_cast<int>(dims[2]), static_cast<int>(dims[3]),
                              std::move(data));
}

void tensor_write(const std::string& path, const Tensor4& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("tensor_write: cannot open " + path);
    dpt1_encode(out, t);
    if (!out)
        throw std::runtime_error("tensor_write: write failed for " + path);
}

Tensor4 tensor_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DecodeError("tensor_read: cannot open " + path);
    return dpt1_decode(in);
}

} // namespace dppn
