#include "petri/analysis/complexity.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "petri/descriptor/descriptor.hpp"
#include "petri/runio/image.hpp"

namespace petri {

namespace {

double entropy_bits(std::span<const double> mass) {
  double total = 0.0;
  for (double m : mass) total += m;
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double m : mass) {
    if (m > 0.0) {
      const double p = m / total;
      h -= p * std::log2(p);
    }
  }
  return std::max(0.0, h);
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = sd = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  for (double x : xs) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(xs.size()));
}

}  // namespace

double species_entropy(const Tensor& alive) {
  const std::size_t n = alive.dim(0), cells = alive.dim(1);
  std::vector<double> mass(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < cells; ++i) mass[k] += alive[k * cells + i];
  }
  return entropy_bits(mass);
}

double persistence_threshold(std::size_t agents) { return 0.1 * std::log2(static_cast<double>(agents)); }

double ecological_persistence(std::span<const double> entropies, std::size_t agents) {
  if (entropies.empty()) return 0.0;
  const double eps = persistence_threshold(agents);
  const auto hits = std::count_if(entropies.begin(), entropies.end(), [&](double h) { return h > eps; });
  return static_cast<double>(hits) / static_cast<double>(entropies.size());
}

std::vector<std::uint8_t> lz77_compress(std::span<const std::uint8_t> in) {
  // Hash chains on 3-byte prefixes, walked nearest-first. Any match of the
  // minimum length shares the prefix, so this finds the same match as an
  // exhaustive window scan.
  constexpr std::size_t kHashBits = 15;
  const std::size_t n = in.size();
  std::vector<std::int64_t> head(std::size_t{1} << kHashBits, -1);
  std::vector<std::int64_t> prev(n, -1);
  auto hash3 = [&](std::size_t i) {
    const std::uint32_t v = (std::uint32_t{in[i]} << 16) | (std::uint32_t{in[i + 1]} << 8) | in[i + 2];
    return (v * 2654435761u) >> (32 - kHashBits);
  };
  auto insert = [&](std::size_t i) {
    if (i + kLzMinMatch > n) return;
    const auto h = hash3(i);
    prev[i] = head[h];
    head[h] = static_cast<std::int64_t>(i);
  };

  std::vector<std::uint8_t> out;
  std::size_t flag_pos = 0, tokens = 0;
  std::size_t i = 0;
  while (i < n) {
    if (tokens % 8 == 0) {
      flag_pos = out.size();
      out.push_back(0);
    }
    std::size_t best_len = 0, best_off = 0;
    if (i + kLzMinMatch <= n) {
      const std::size_t limit = std::min(kLzMaxMatch, n - i);
      for (std::int64_t j = head[hash3(i)]; j >= 0; j = prev[static_cast<std::size_t>(j)]) {
        const std::size_t off = i - static_cast<std::size_t>(j);
        if (off > kLzWindow) break;
        std::size_t len = 0;
        while (len < limit && in[static_cast<std::size_t>(j) + len] == in[i + len]) ++len;
        if (len > best_len) {
          best_len = len;
          best_off = off;
          if (len == limit) break;
        }
      }
    }
    if (best_len >= kLzMinMatch) {
      out[flag_pos] |= static_cast<std::uint8_t>(1u << (tokens % 8));
      out.push_back(static_cast<std::uint8_t>(best_off & 0xff));
      out.push_back(static_cast<std::uint8_t>(best_off >> 8));
      out.push_back(static_cast<std::uint8_t>(best_len));
      for (std::size_t q = 0; q < best_len; ++q) insert(i + q);
      i += best_len;
    } else {
      out.push_back(in[i]);
      insert(i);
      ++i;
    }
    ++tokens;
  }
  return out;
}

std::vector<std::uint8_t> lz77_decompress(std::span<const std::uint8_t> in) {
  std::vector<std::uint8_t> out;
  std::size_t p = 0;
  while (p < in.size()) {
    const std::uint8_t flags = in[p++];
    for (int bit = 0; bit < 8 && p < in.size(); ++bit) {
      if (flags & (1u << bit)) {
        if (p + 3 > in.size()) throw Error("lz77: truncated match token");
        const std::size_t off = in[p] | (std::size_t{in[p + 1]} << 8);
        const std::size_t len = in[p + 2];
        p += 3;
        if (off == 0 || off > out.size() || off > kLzWindow || len < kLzMinMatch) {
          throw Error("lz77: invalid match token");
        }
        const std::size_t from = out.size() - off;
        for (std::size_t q = 0; q < len; ++q) out.push_back(out[from + q]);
      } else {
        out.push_back(in[p++]);
      }
    }
  }
  return out;
}

double lz77_ratio(std::span<const std::uint8_t> input) {
  if (input.empty()) throw Error("lz77_ratio: empty input");
  const double r = static_cast<double>(lz77_compress(input).size()) / static_cast<double>(input.size());
  return std::min(1.0, r);
}

SymbolGrid symbolize(const Frame& frame, GridSymbols mode, std::size_t height, std::size_t width) {
  SymbolGrid g;
  if (mode == GridSymbols::kRgb) {
    g.bytes = render_frame(frame, height, width).rgb;
    // Pixel colors quantized to 2 bits per channel.
    for (std::size_t i = 0; i + 2 < g.bytes.size(); i += 3) {
      g.symbols.push_back(static_cast<std::uint8_t>((g.bytes[i] >> 6) << 4 | (g.bytes[i + 1] >> 6) << 2 | g.bytes[i + 2] >> 6));
    }
    g.alphabet = 64;
    return g;
  }
  g.symbols = winner_map(frame);
  g.alphabet = frame.weights.dim(0);
  if (mode == GridSymbols::kWinner) {
    g.bytes = g.symbols;
    return g;
  }
  std::size_t bits = 1;
  while ((std::size_t{1} << bits) < g.alphabet) ++bits;
  std::uint32_t acc = 0;
  std::size_t filled = 0;
  for (std::uint8_t s : g.symbols) {
    acc = (acc << bits) | s;
    filled += bits;
    while (filled >= 8) {
      filled -= 8;
      g.bytes.push_back(static_cast<std::uint8_t>(acc >> filled));
      acc &= (1u << filled) - 1;
    }
  }
  if (filled > 0) g.bytes.push_back(static_cast<std::uint8_t>(acc << (8 - filled)));
  return g;
}

double normalized_entropy(std::span<const std::uint8_t> symbols, std::size_t alphabet) {
  if (alphabet < 2 || symbols.empty()) return 0.0;
  std::array<double, 256> counts{};
  for (std::uint8_t s : symbols) counts[s] += 1.0;
  return std::min(1.0, entropy_bits(counts) / std::log2(static_cast<double>(alphabet)));
}

double effective_complexity(const SymbolGrid& grid) {
  const double h = normalized_entropy(grid.symbols, grid.alphabet);
  if (h == 0.0) return 0.0;
  return h * (1.0 - lz77_ratio(grid.bytes));
}

double effective_complexity(const Frame& frame, GridSymbols mode, std::size_t height, std::size_t width) {
  return effective_complexity(symbolize(frame, mode, height, width));
}

ComplexityReport analyze_trajectory(const Trajectory& trajectory, std::size_t height, std::size_t width,
                                    GridSymbols mode) {
  ComplexityReport r;
  if (trajectory.empty()) return r;
  const std::size_t agents = trajectory.front().alive.dim(0);
  for (const Frame& f : trajectory) {
    r.species_entropy.push_back(species_entropy(f.alive));
    r.effective_complexity.push_back(effective_complexity(f, mode, height, width));
  }
  r.persistence = ecological_persistence(r.species_entropy, agents);
  mean_std(r.species_entropy, r.entropy_mean, r.entropy_std);
  mean_std(r.effective_complexity, r.complexity_mean, r.complexity_std);
  return r;
}

}  // namespace petri
