#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "petri/substrate/world.hpp"

namespace petri {

/// Shannon entropy (bits) of the grid-total alive mass of the N agents.
/// All-dead frames give 0.
double species_entropy(const Tensor& alive);

/// Fraction of frames with H^t > 0.1 log2(N).
double ecological_persistence(std::span<const double> entropies, std::size_t agents);
double persistence_threshold(std::size_t agents);

// Greedy LZ77: 4096-byte window, matches of 3..255 bytes, longest match wins
// and the nearest offset breaks ties. Tokens are grouped eight to a flag byte
// (bit i set = token i is a match). Literal: 1 byte. Match: offset (u16 LE,
// 1..4096) then length (u8).
inline constexpr std::size_t kLzWindow = 4096;
inline constexpr std::size_t kLzMinMatch = 3;
inline constexpr std::size_t kLzMaxMatch = 255;

std::vector<std::uint8_t> lz77_compress(std::span<const std::uint8_t> input);
std::vector<std::uint8_t> lz77_decompress(std::span<const std::uint8_t> compressed);

/// min(1, compressed / original). Throws on empty input.
double lz77_ratio(std::span<const std::uint8_t> input);

enum class GridSymbols {
  kWinner,     // argmax entity per cell, one byte per cell
  kWinnerPacked,  // same symbols bit-packed at ceil(log2(N+1)) bits each
  kRgb,        // rendered 8-bit RGB; entropy over 64 quantized colors
};

struct SymbolGrid {
  std::vector<std::uint8_t> bytes;    // what the coder sees
  std::vector<std::uint8_t> symbols;  // what the entropy is taken over
  std::size_t alphabet = 0;
};

SymbolGrid symbolize(const Frame& frame, GridSymbols mode, std::size_t height, std::size_t width);

/// Entropy of the symbol histogram over log2(alphabet).
double normalized_entropy(std::span<const std::uint8_t> symbols, std::size_t alphabet);

double effective_complexity(const SymbolGrid& grid);
double effective_complexity(const Frame& frame, GridSymbols mode, std::size_t height, std::size_t width);

struct ComplexityReport {
  std::vector<double> species_entropy;
  std::vector<double> effective_complexity;
  double persistence = 0.0;
  double entropy_mean = 0.0;
  double entropy_std = 0.0;
  double complexity_mean = 0.0;
  double complexity_std = 0.0;
};

ComplexityReport analyze_trajectory(const Trajectory& trajectory, std::size_t height, std::size_t width,
                                    GridSymbols mode);

}  // namespace petri
