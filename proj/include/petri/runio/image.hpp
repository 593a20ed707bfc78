#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "petri/substrate/world.hpp"

namespace petri {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  bool operator==(const Image&) const = default;
};

/// Linear-light RGB of entity e out of `agents` agents (e = 0 is the environment).
std::array<double, 3> palette_color(std::size_t e, std::size_t agents);

/// Weight-blended palette, gamma 2.2, 8-bit.
Image render_frame(const Frame& frame, std::size_t height, std::size_t width);

/// Grid of equally sized images, `columns` per row, black padding.
Image montage(const std::vector<Image>& images, std::size_t columns);

/// Inverse of render_frame for pure owners: each pixel becomes a one-hot
/// weight on the entity whose rendered color is nearest.
Frame frame_from_image(const Image& image, std::size_t agents);

std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const Image& image, const std::string& path);
Image read_png(const std::string& path);

}  // namespace petri
