#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

namespace petri {

/// Bounded FIFO of behavior descriptors.
class Archive {
 public:
  explicit Archive(std::size_t capacity = 256, std::uint64_t reset_period = 0);

  /// `ranked` is best-first. Clears first when reset_period divides t, then
  /// appends the first m entries and evicts oldest beyond capacity.
  void update(const std::vector<std::vector<double>>& ranked, std::size_t m, std::uint64_t t);
  void push(std::vector<double> descriptor);
  void clear() { buffer_.clear(); }

  const std::deque<std::vector<double>>& entries() const { return buffer_; }
  std::size_t size() const { return buffer_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t reset_period() const { return reset_period_; }
  std::uint64_t inserted() const { return inserted_; }
  void set_inserted(std::uint64_t n) { inserted_ = n; }

 private:
  std::size_t capacity_;
  std::uint64_t reset_period_;
  std::uint64_t inserted_ = 0;
  std::deque<std::vector<double>> buffer_;
};

double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// Mean distance to the min(k, |archive|) nearest entries; 0 for an empty archive.
double novelty_score(std::span<const double> d, const Archive& archive, std::size_t k);

}  // namespace petri
