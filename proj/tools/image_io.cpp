#include "image_io.hpp"

#include "hiervis/tensor_file.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace hiervis::tools {

namespace fs = std::filesystem;

Image load_image(const fs::path& path) {
  const std::string id = path.stem().string();
  if (path.extension() == ".tensor") return image_from_tensor(read_tensor(path), id);
  if (path.extension() != ".png") throw Error(ErrorKind::format, path.string() + ": expected a .png or .tensor image");

  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw Error(ErrorKind::io, path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error(ErrorKind::format, path.string() + ": " + png.message);
  }
  Image img;
  img.id = id;
  img.height = static_cast<int>(png.height);
  img.width = static_cast<int>(png.width);
  img.channels = 3;
  img.data.resize(buf.size());
  std::transform(buf.begin(), buf.end(), img.data.begin(), [](std::uint8_t v) { return v / 255.0f; });
  return img;
}

void write_png_rgb(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw Error(ErrorKind::io, path.string() + ": " + png.message);
  }
}

namespace {

std::array<std::uint8_t, 3> diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  auto mix = [](double a, double b, double t) { return static_cast<std::uint8_t>(std::lround(a + (b - a) * t)); };
  if (v >= 0) return {mix(255, 178, v), mix(255, 24, v), mix(255, 43, v)};
  return {mix(255, 33, -v), mix(255, 102, -v), mix(255, 172, -v)};
}

}  // namespace

void write_heatmap(const fs::path& path, const Mat& values, int cell_px) {
  const int n = static_cast<int>(values.rows());
  if (path.extension() == ".svg") {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << n * cell_px << "\" height=\"" << n * cell_px
       << "\" shape-rendering=\"crispEdges\">\n";
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const auto c = diverging(values(i, j));
        char color[8];
        std::snprintf(color, sizeof color, "#%02x%02x%02x", c[0], c[1], c[2]);
        os << "<rect x=\"" << j * cell_px << "\" y=\"" << i * cell_px << "\" width=\"" << cell_px << "\" height=\""
           << cell_px << "\" fill=\"" << color << "\"/>\n";
      }
    }
    os << "</svg>\n";
    write_file_atomic(path, os.str());
    return;
  }
  if (path.extension() != ".png") throw Error(ErrorKind::invalid_argument, "plot must end in .png or .svg");
  const int side = n * cell_px;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const auto c = diverging(values(y / cell_px, x / cell_px));
      std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::size_t>(y) * side + x) * 3);
    }
  }
  write_png_rgb(path, side, side, rgb);
}

}  // namespace hiervis::tools
