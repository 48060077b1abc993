#pragma once

#include <string>

#include "nfr/tensor.hpp"

namespace nfr {

/// Saliency rendering: rank-2 tensors become binary PGM (P5), (3,H,W) tensors
/// become binary PPM (P6). Values are min-max scaled to 0..255 per image; a
/// constant image renders as mid-gray 128.
void render_saliency(const Tensor& r, const std::string& path);

/// Reads a P5/P6 image back into a tensor scaled to [0,1]: shape (H,W) for
/// grayscale, (3,H,W) for color.
Tensor read_image(const std::string& path);

}  // namespace nfr
