#include "petri/novelty/archive.hpp"

#include <algorithm>
#include <cmath>

#include "petri/common.hpp"

namespace petri {

Archive::Archive(std::size_t capacity, std::uint64_t reset_period) : capacity_(capacity), reset_period_(reset_period) {
  if (capacity == 0) throw ConfigError("archive capacity must be >= 1");
}

void Archive::push(std::vector<double> descriptor) {
  buffer_.push_back(std::move(descriptor));
  ++inserted_;
  while (buffer_.size() > capacity_) buffer_.pop_front();
}

void Archive::update(const std::vector<std::vector<double>>& ranked, std::size_t m, std::uint64_t t) {
  if (m == 0) throw ConfigError("archive increment m must be >= 1");
  if (reset_period_ > 0 && t % reset_period_ == 0) buffer_.clear();
  for (std::size_t i = 0; i < std::min(m, ranked.size()); ++i) push(ranked[i]);
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("descriptor lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double novelty_score(std::span<const double> d, const Archive& archive, std::size_t k) {
  if (k == 0) throw ConfigError("k must be >= 1");
  if (archive.size() == 0) return 0.0;
  std::vector<double> dist;
  dist.reserve(archive.size());
  for (const auto& e : archive.entries()) dist.push_back(euclidean_distance(d, e));
  const std::size_t use = std::min(k, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(use), dist.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < use; ++i) sum += dist[i];
  return sum / static_cast<double>(use);
}

}  // namespace petri
