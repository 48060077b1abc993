#include "nfr/image_io.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace nfr {

namespace {

std::vector<std::uint8_t> scale_to_bytes(const Vec& v) {
  const double lo = v.minCoeff();
  const double hi = v.maxCoeff();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(v.size()));
  if (hi == lo) {
    std::fill(out.begin(), out.end(), std::uint8_t{128});
    return out;
  }
  const double scale = 255.0 / (hi - lo);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double s = (v[i] - lo) * scale;
    out[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::clamp(s + 0.5, 0.0, 255.0));
  }
  return out;
}

int read_pnm_int(std::istream& in) {
  // Skips whitespace and '#' comments per the PNM header grammar.
  int c = in.get();
  while (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
    }
    c = in.get();
  }
  if (c == EOF || c < '0' || c > '9') {
    throw std::runtime_error("image: malformed header");
  }
  int value = 0;
  while (c >= '0' && c <= '9') {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace

void render_saliency(const Tensor& r, const std::string& path) {
  const Shape& s = r.shape();
  const bool color = s.rank() == 3 && s.dims[0] == 3;
  if (!color && s.rank() != 2) {
    throw std::invalid_argument(
        "render_saliency: need (H,W) or (3,H,W), have " + s.str());
  }
  const int h = color ? s.dims[1] : s.dims[0];
  const int w = color ? s.dims[2] : s.dims[1];
  const auto bytes = scale_to_bytes(r.flat());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << (color ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  if (!color) {
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  } else {
    // channel-major tensor -> interleaved pixels
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) {
        out.put(static_cast<char>(bytes[c * plane + p]));
      }
    }
  }
}

Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6')) {
    throw std::runtime_error("image: magic-mismatch (want P5/P6)");
  }
  const bool color = m1 == '6';
  const int w = read_pnm_int(in);
  const int h = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (w < 1 || h < 1 || maxval != 255) {
    throw std::runtime_error("image: malformed header");
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t n = color ? plane * 3 : plane;
  std::vector<std::uint8_t> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw std::runtime_error("image: truncated payload");
  }
  Vec data(static_cast<Eigen::Index>(n));
  if (!color) {
    for (std::size_t i = 0; i < n; ++i) data[static_cast<Eigen::Index>(i)] = bytes[i] / 255.0;
    return Tensor::from_flat(Shape{h, w}, std::move(data));
  }
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      data[static_cast<Eigen::Index>(c * plane + p)] = bytes[3 * p + c] / 255.0;
    }
  }
  return Tensor::from_flat(Shape{3, h, w}, std::move(data));
}

}  // namespace nfr
