#include "nfr/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nfr {

namespace {

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f64_le(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
  }
}

double get_f64_le(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

constexpr char kMagic[5] = {'N', 'F', 'R', 'T', '1'};

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.empty()) throw std::invalid_argument("encode_tensor: empty tensor");
  if (t.shape().rank() > 255) {
    throw std::invalid_argument("encode_tensor: rank exceeds u8");
  }
  std::vector<std::uint8_t> out;
  out.reserve(6 + 4 * t.shape().rank() + 8 * t.size());
  out.insert(out.end(), kMagic, kMagic + 5);
  out.push_back(static_cast<std::uint8_t>(t.shape().rank()));
  for (int d : t.shape().dims) put_u32_le(out, static_cast<std::uint32_t>(d));
  for (Eigen::Index i = 0; i < t.size(); ++i) put_f64_le(out, t.flat()[i]);
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 5) != 0) {
    throw std::runtime_error("NFRT1: magic-mismatch");
  }
  const int rank = bytes[5];
  std::size_t off = 6;
  if (rank < 1) throw std::runtime_error("NFRT1: rank must be >= 1");
  if (bytes.size() < off + 4u * rank) {
    throw std::runtime_error("NFRT1: truncated extents");
  }
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32_le(bytes.data() + off);
    off += 4;
    if (d == 0) throw std::runtime_error("NFRT1: zero extent");
    shape.dims.push_back(static_cast<int>(d));
  }
  const std::int64_t count = shape.count();
  if (bytes.size() != off + 8u * static_cast<std::size_t>(count)) {
    throw std::runtime_error("NFRT1: truncated payload, expected " +
                             std::to_string(count) + " values");
  }
  Vec data(count);
  for (std::int64_t i = 0; i < count; ++i) {
    data[i] = get_f64_le(bytes.data() + off + 8 * i);
  }
  return Tensor::from_flat(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void write_tensor_file(const std::string& path, const Tensor& t) {
  write_file_bytes(path, encode_tensor(t));
}

Tensor read_tensor_file(const std::string& path) {
  return decode_tensor(read_file_bytes(path));
}

}  // namespace nfr
