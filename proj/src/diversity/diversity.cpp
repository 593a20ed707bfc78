#include "petri/diversity/diversity.hpp"

#include <algorithm>

namespace petri {

double median_inplace(std::vector<double>& v) {
  if (v.empty()) throw Error("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::vector<double> diversity_scores(const std::vector<std::vector<Embedding>>& z) {
  const std::size_t p = z.size();
  std::vector<double> d(p, 0.0);
  if (p < 2) return d;
  const std::size_t steps = z[0].size();
  for (const auto& w : z) {
    if (w.size() != steps) throw ShapeError("diversity: worlds sampled at different timestep counts");
  }
  if (steps == 0) return d;

  std::vector<double> dist(p * p, 0.0), row;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = i + 1; j < p; ++j) {
        const Embedding& a = z[i][t];
        const Embedding& b = z[j][t];
        if (a.size() != b.size()) throw ShapeError("diversity: embedding dimensions differ");
        double dot = 0;
        for (std::size_t c = 0; c < a.size(); ++c) dot += static_cast<double>(a[c]) * b[c];
        dist[i * p + j] = dist[j * p + i] = 1.0 - dot;
      }
    }
    for (std::size_t i = 0; i < p; ++i) {
      row.clear();
      for (std::size_t j = 0; j < p; ++j)
        if (j != i) row.push_back(dist[i * p + j]);
      d[i] += median_inplace(row);
    }
  }
  for (double& v : d) v /= static_cast<double>(steps);
  return d;
}

std::vector<std::size_t> sample_frame_indices(std::size_t length, std::size_t shortest, std::size_t stride) {
  if (stride == 0) throw ConfigError("frame stride must be >= 1");
  if (length == 0 || shortest == 0) return {};
  if (shortest > length) throw Error("sample_frame_indices: shortest exceeds length");
  const std::size_t s = std::max<std::size_t>(1, shortest / stride);
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < s; ++j) {
    // round-half-up of (j+1) * length / s, minus one
    idx.push_back((2 * (j + 1) * length + s) / (2 * s) - 1);
  }
  return idx;
}

}  // namespace petri
