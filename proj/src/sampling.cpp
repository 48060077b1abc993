#include "nfr/sampling.hpp"

#include <stdexcept>

#include "nfr/rng.hpp"

namespace nfr {

std::string dist_kind_name(DistKind kind) {
  switch (kind) {
    case DistKind::Gaussian: return "gaussian";
    case DistKind::Ring: return "ring";
    case DistKind::UniformCube: return "uniform_cube";
  }
  throw std::logic_error("dist_kind_name: bad enum");
}

DistKind dist_kind_from_name(const std::string& name) {
  if (name == "gaussian") return DistKind::Gaussian;
  if (name == "ring") return DistKind::Ring;
  if (name == "uniform_cube") return DistKind::UniformCube;
  throw std::invalid_argument("unknown distribution kind '" + name + "'");
}

void DistSpec::validate() const {
  if (!(scale > 0.0)) {
    throw std::invalid_argument("invalid-spec: scale must be > 0");
  }
}

Tensor sample_gaussian(const Shape& shape, const DistSpec& spec) {
  spec.validate();
  if (spec.kind != DistKind::Gaussian) {
    throw std::invalid_argument("invalid-spec: sample_gaussian needs kind=gaussian");
  }
  Rng rng(spec.seed);
  Vec out(shape.count());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out[i] = spec.scale * rng.next_normal();
  }
  return Tensor::from_flat(shape, std::move(out));
}

Tensor sample_ring(int rows, int cols, const DistSpec& spec) {
  spec.validate();
  if (spec.kind != DistKind::Ring) {
    throw std::invalid_argument("invalid-spec: sample_ring needs kind=ring");
  }
  if (rows < 1 || cols < 1) {
    throw std::invalid_argument("invalid-shape: ring needs rows,cols >= 1");
  }
  Rng rng(spec.seed);
  Vec out(static_cast<Eigen::Index>(rows) * cols);
  Vec row(cols);
  for (int r = 0; r < rows; ++r) {
    double n2;
    do {
      for (int c = 0; c < cols; ++c) row[c] = rng.next_normal();
      n2 = row.norm();
    } while (n2 == 0.0);
    out.segment(static_cast<Eigen::Index>(r) * cols, cols) =
        row * (spec.scale / n2);
  }
  return Tensor::from_flat(Shape{rows, cols}, std::move(out));
}

Tensor sample_uniform_cube(const Shape& shape, const DistSpec& spec) {
  spec.validate();
  if (spec.kind != DistKind::UniformCube) {
    throw std::invalid_argument(
        "invalid-spec: sample_uniform_cube needs kind=uniform_cube");
  }
  Rng rng(spec.seed);
  Vec out(shape.count());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out[i] = rng.next_uniform(-spec.scale, spec.scale);
  }
  return Tensor::from_flat(shape, std::move(out));
}

Tensor sample_weight_rows(int rows, int cols, const DistSpec& spec) {
  switch (spec.kind) {
    case DistKind::Gaussian:
      return sample_gaussian(Shape{rows, cols}, spec);
    case DistKind::Ring:
      return sample_ring(rows, cols, spec);
    case DistKind::UniformCube:
      return sample_uniform_cube(Shape{rows, cols}, spec);
  }
  throw std::logic_error("sample_weight_rows: bad enum");
}

}  // namespace nfr
