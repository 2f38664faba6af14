#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>

#include "dppn/tensor.hpp"

namespace dppn {

struct DecodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// DPT1 tensor format: magic "DPT1", u8 dtype (0 = float32), u32 rank (= 4),
// rank x u32 dims, raw float32 payload. All integers and floats little-endian,
// payload row-major. Round-trips are bit-exact.
void dpt1_encode(std::ostream& out, const Tensor4& t);
Tensor4 dpt1_decode(std::istream& in);

void tensor_write(const std::string& path, const Tensor4& t);
Tensor4 tensor_read(const std::string& path);

// little-endian primitives shared by the checkpoint format
void write_u32(std::ostream& out, std::uint32_t v);
void write_f32(std::ostream& out, float v);
std::uint32_t read_u32(std::istream& in);
float read_f32(std::istream& in);

} // namespace dppn
