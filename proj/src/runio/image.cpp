#include "petri/runio/image.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace petri {

std::array<double, 3> palette_color(std::size_t e, std::size_t agents) {
  if (e == 0) return {0.02, 0.02, 0.02};
  // Fully saturated hue (e-1)/N.
  const double h = 6.0 * static_cast<double>(e - 1) / static_cast<double>(agents);
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1.0, x, 0.0};
    case 1: return {x, 1.0, 0.0};
    case 2: return {0.0, 1.0, x};
    case 3: return {0.0, x, 1.0};
    case 4: return {x, 0.0, 1.0};
    default: return {1.0, 0.0, x};
  }
}

Image render_frame(const Frame& frame, std::size_t height, std::size_t width) {
  const Tensor& w = frame.weights;
  const std::size_t entities = w.dim(0), cells = w.dim(1);
  if (cells != height * width) throw ShapeError("render_frame: grid size does not match weights");
  std::vector<std::array<double, 3>> colors;
  for (std::size_t e = 0; e < entities; ++e) colors.push_back(palette_color(e, entities - 1));
  Image img{width, height, std::vector<std::uint8_t>(cells * 3)};
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double v = 0.0;
      for (std::size_t e = 0; e < entities; ++e) v += w[e * cells + i] * colors[e][ch];
      v = std::pow(std::clamp(v, 0.0, 1.0), 1.0 / 2.2);
      img.rgb[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

Frame frame_from_image(const Image& image, std::size_t agents) {
  const std::size_t cells = image.width * image.height;
  if (agents == 0 || image.rgb.size() != cells * 3) throw ShapeError("frame_from_image: malformed image");
  std::vector<std::array<int, 3>> pure;
  for (std::size_t e = 0; e <= agents; ++e) {
    const auto c = palette_color(e, agents);
    std::array<int, 3> px{};
    for (std::size_t ch = 0; ch < 3; ++ch) px[ch] = static_cast<int>(std::lround(255.0 * std::pow(c[ch], 1.0 / 2.2)));
    pure.push_back(px);
  }
  Frame f;
  f.weights = Tensor({agents + 1, cells});
  f.alive = Tensor({agents, cells});
  for (std::size_t i = 0; i < cells; ++i) {
    std::size_t best = 0;
    long best_d = -1;
    for (std::size_t e = 0; e <= agents; ++e) {
      long d = 0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const long diff = static_cast<long>(image.rgb[i * 3 + ch]) - pure[e][ch];
        d += diff * diff;
      }
      if (best_d < 0 || d < best_d) best_d = d, best = e;
    }
    f.weights[best * cells + i] = 1.0f;
    if (best > 0) f.alive[(best - 1) * cells + i] = 1.0f;
  }
  return f;
}

Image montage(const std::vector<Image>& images, std::size_t columns) {
  if (images.empty()) return {};
  if (columns == 0) throw ConfigError("montage needs at least one column");
  const std::size_t tw = images[0].width, th = images[0].height;
  const std::size_t rows = (images.size() + columns - 1) / columns;
  const std::size_t cols = std::min(columns, images.size());
  Image out{cols * tw, rows * th, std::vector<std::uint8_t>(cols * tw * rows * th * 3, 0)};
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = images[n];
    if (im.width != tw || im.height != th) throw ShapeError("montage: images differ in size");
    const std::size_t ox = (n % columns) * tw, oy = (n / columns) * th;
    for (std::size_t y = 0; y < th; ++y) {
      std::memcpy(&out.rgb[((oy + y) * out.width + ox) * 3], &im.rgb[y * tw * 3], tw * 3);
    }
  }
  return out;
}

namespace {

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_from_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + length > cur->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(data, cur->bytes->data() + cur->pos, length);
  cur->pos += length;
}

[[noreturn]] void png_throw(png_structp, png_const_charp msg) { throw Error(std::string("png: ") + msg); }

void png_warn(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.rgb.size() != image.width * image.height * 3 || image.width == 0 || image.height == 0) {
    throw ShapeError("encode_png: malformed image");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn);
  if (!png) throw Error("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  try {
    png_set_write_fn(png, &out, png_write_to_vector, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y) {
      png_write_row(png, const_cast<png_bytep>(&image.rgb[y * image.width * 3]));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw Error("png: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn);
  if (!png) throw Error("png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  Image img;
  try {
    ReadCursor cur{&bytes, 0};
    png_set_read_fn(png, &cur, png_read_from_vector);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    if (png_get_rowbytes(png, info) != img.width * 3) throw Error("png: unsupported pixel layout");
    img.rgb.resize(img.width * img.height * 3);
    for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, &img.rgb[y * img.width * 3], nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const Image& image, const std::string& path) {
  const auto bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing " + path);
}

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

}  // namespace petri
