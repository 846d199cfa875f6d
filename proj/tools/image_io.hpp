#pragma once

#include "hiervis/decomposition.hpp"

#include <filesystem>

namespace hiervis::tools {

// PNG (8-bit, converted to RGB) or TensorFile ([H x W] / [H x W x C]). Pixel values in [0, 1].
Image load_image(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& rgb);

// Diverging blue-white-red heatmap of a square matrix with values in [-1, 1].
void write_heatmap(const std::filesystem::path& path, const Mat& values, int cell_px = 4);

}  // namespace hiervis::tools
