#pragma once

#include "smarc/tensor.hpp"

#include <string>

namespace smarc {

/// Decode an 8-bit PNG or JPEG into an H x W x 3 tensor scaled by 1/255.
/// Throws std::runtime_error on unreadable or undecodable files.
Tensor<float> read_image(const std::string& path);

/// Write an H x W x 1 or H x W x 3 tensor as an 8-bit PNG, clamping to [0, 1].
void write_png(const std::string& path, const Tensor<float>& img);

/// Bilinear resize to a square target.
Tensor<float> resize_bilinear(const Tensor<float>& img, Index out_h, Index out_w);

}  // namespace smarc
