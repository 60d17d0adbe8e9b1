#pragma once

#include <filesystem>

#include "ccnn/tensor.hpp"

namespace ccnn {

/// Reads a binary PGM (P5) or PPM (P6) image as a (1, c, h, w) tensor with
/// values scaled to [0, 1]; c is 1 for PGM and 3 for PPM. 8- and 16-bit
/// samples are supported. Throws FormatError on malformed input.
Tensor read_pnm(const std::filesystem::path& path);

/// Writes channel 0 of sample 0 as an 8-bit P5 image, clamping to [0, 1].
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Writes a (1, 3, h, w) tensor as an 8-bit P6 image, clamping to [0, 1].
void write_ppm(const std::filesystem::path& path, const Tensor& image);

/// Luma (0.299 R + 0.587 G + 0.114 B) of a 3-channel tensor; 1-channel input is returned as is.
Tensor to_grayscale(const Tensor& image);

}  // namespace ccnn
