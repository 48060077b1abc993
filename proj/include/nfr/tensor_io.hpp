#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfr/tensor.hpp"

namespace nfr {

/// Raw tensor file format "NFRT1":
///   5-byte magic "NFRT1", u8 rank, rank x u32 little-endian extents,
///   then count x f64 little-endian payload.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes);

}  // namespace nfr
