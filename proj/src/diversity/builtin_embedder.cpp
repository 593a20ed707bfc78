#include <algorithm>
#include <cmath>

#include "petri/diversity/embedder.hpp"

namespace petri {

namespace {

struct Span {
  std::size_t begin, end;
};

// Block b of n over a length; never empty.
Span block(std::size_t b, std::size_t n, std::size_t length) {
  std::size_t lo = b * length / n, hi = (b + 1) * length / n;
  if (lo >= length) lo = length - 1;
  if (hi <= lo) hi = lo + 1;
  return {lo, hi};
}

double luminance(double r, double g, double b) { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }

void append_block_means(const std::vector<double>& plane, std::size_t h, std::size_t w, std::size_t n,
                        Embedding& out) {
  for (std::size_t by = 0; by < n; ++by) {
    const Span ys = block(by, n, h);
    for (std::size_t bx = 0; bx < n; ++bx) {
      const Span xs = block(bx, n, w);
      double s = 0;
      for (std::size_t y = ys.begin; y < ys.end; ++y)
        for (std::size_t x = xs.begin; x < xs.end; ++x) s += plane[y * w + x];
      out.push_back(static_cast<float>(s / static_cast<double>((ys.end - ys.begin) * (xs.end - xs.begin))));
    }
  }
}

// Normalized circular autocorrelation; 0 for a flat signal.
double autocorrelation(const std::vector<double>& x, std::size_t lag) {
  const std::size_t n = x.size();
  double m = 0;
  for (double v : x) m += v;
  m /= static_cast<double>(n);
  double var = 0, cov = 0;
  for (std::size_t i = 0; i < n; ++i) {
    var += (x[i] - m) * (x[i] - m);
    cov += (x[i] - m) * (x[(i + lag) % n] - m);
  }
  return var > 1e-12 ? cov / var : 0.0;
}

}  // namespace

Embedding BuiltinEmbedder::features(const Image& img) {
  const std::size_t h = img.height, w = img.width, px = h * w;
  if (px == 0 || img.rgb.size() != px * 3) throw ShapeError("embed: malformed image");

  std::vector<double> lum(px), r(px), g(px), b(px);
  for (std::size_t i = 0; i < px; ++i) {
    r[i] = img.rgb[3 * i] / 255.0;
    g[i] = img.rgb[3 * i + 1] / 255.0;
    b[i] = img.rgb[3 * i + 2] / 255.0;
    lum[i] = luminance(r[i], g[i], b[i]);
  }

  Embedding out;
  out.reserve(kDimension);
  append_block_means(lum, h, w, 12, out);
  append_block_means(r, h, w, 12, out);
  append_block_means(g, h, w, 12, out);
  append_block_means(b, h, w, 12, out);

  std::vector<double> hist(64, 0.0);
  for (std::size_t i = 0; i < px; ++i) {
    const double mx = std::max({r[i], g[i], b[i]}), mn = std::min({r[i], g[i], b[i]});
    double hue = 0.0;
    if (mx - mn > 1e-12) {
      const double d = mx - mn;
      if (mx == r[i]) hue = std::fmod((g[i] - b[i]) / d + 6.0, 6.0);
      else if (mx == g[i]) hue = (b[i] - r[i]) / d + 2.0;
      else hue = (r[i] - g[i]) / d + 4.0;
      hue /= 6.0;
    }
    const auto hb = std::min<std::size_t>(15, static_cast<std::size_t>(hue * 16));
    const auto vb = std::min<std::size_t>(3, static_cast<std::size_t>(mx * 4));
    hist[hb * 4 + vb] += 1.0;
  }
  for (double c : hist) out.push_back(static_cast<float>(c / static_cast<double>(px)));

  std::vector<double> grad(px);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = lum[y * w + (x + 1) % w] - lum[y * w + x];
      const double gy = lum[((y + 1) % h) * w + x] - lum[y * w + x];
      grad[y * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  append_block_means(grad, h, w, 8, out);

  static constexpr std::size_t kLags[] = {1, 2, 4, 8};
  for (std::size_t s = 0; s < 8; ++s) {
    const Span rows = block(s, 8, h);
    std::vector<double> profile(w, 0.0);
    for (std::size_t y = rows.begin; y < rows.end; ++y)
      for (std::size_t x = 0; x < w; ++x) profile[x] += lum[y * w + x];
    for (std::size_t lag : kLags) out.push_back(static_cast<float>(autocorrelation(profile, lag)));
  }
  for (std::size_t s = 0; s < 8; ++s) {
    const Span cols = block(s, 8, w);
    std::vector<double> profile(h, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = cols.begin; x < cols.end; ++x) profile[y] += lum[y * w + x];
    for (std::size_t lag : kLags) out.push_back(static_cast<float>(autocorrelation(profile, lag)));
  }

  double norm = 0;
  for (float v : out) norm += static_cast<double>(v) * v;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (float& v : out) v = static_cast<float>(v / norm);
  }
  return out;
}

std::vector<Embedding> BuiltinEmbedder::embed(const std::vector<Image>& frames) {
  std::vector<Embedding> out;
  out.reserve(frames.size());
  for (const Image& f : frames) out.push_back(features(f));
  return out;
}

}  // namespace petri
