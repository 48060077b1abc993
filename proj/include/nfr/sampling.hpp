#pragma once

#include <cstdint>
#include <string>

#include "nfr/tensor.hpp"

namespace nfr {

enum class DistKind { Gaussian, Ring, UniformCube };

std::string dist_kind_name(DistKind kind);
DistKind dist_kind_from_name(const std::string& name);

/// Which weight distribution to draw from and with which scale:
/// std-dev for Gaussian, sphere radius for Ring, half-width for UniformCube.
struct DistSpec {
  DistKind kind = DistKind::Gaussian;
  double scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// I.i.d. zero-mean Gaussian entries with std-dev = spec.scale.
Tensor sample_gaussian(const Shape& shape, const DistSpec& spec);

/// rows x cols matrix whose rows are independent draws uniform on the sphere
/// of radius spec.scale in `cols` dimensions (Gaussian draw renormalized).
Tensor sample_ring(int rows, int cols, const DistSpec& spec);

/// I.i.d. entries uniform on [-scale, +scale].
Tensor sample_uniform_cube(const Shape& shape, const DistSpec& spec);

/// Dispatch on spec.kind for a weight matrix with `rows` independent
/// `cols`-dimensional unit draws (ring) or plain i.i.d. fills (others).
Tensor sample_weight_rows(int rows, int cols, const DistSpec& spec);

}  // namespace nfr
