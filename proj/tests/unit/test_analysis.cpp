#include <gtest/gtest.h>

#include <cmath>

#include "petri/analysis/complexity.hpp"

using namespace petri;

namespace {

// Exhaustive greedy parse: scan every window offset nearest-first, keep the
// first longest. Returns the compressed size only.
std::size_t naive_lz77_size(const std::vector<std::uint8_t>& in) {
  std::size_t tokens = 0, literals = 0, matches = 0, i = 0;
  while (i < in.size()) {
    std::size_t best = 0;
    for (std::size_t off = 1; off <= std::min<std::size_t>(4096, i); ++off) {
      std::size_t len = 0;
      while (len < 255 && i + len < in.size() && in[i - off + len] == in[i + len]) ++len;
      if (len > best) best = len;
    }
    if (best >= 3) {
      ++matches;
      i += best;
    } else {
      ++literals;
      ++i;
    }
    ++tokens;
  }
  return (tokens + 7) / 8 + literals + 3 * matches;
}

std::vector<std::uint8_t> random_bytes(Rng& rng, std::size_t n, std::uint64_t alphabet = 256) {
  std::vector<std::uint8_t> v(n);
  for (auto& b : v) b = static_cast<std::uint8_t>(uniform_index(rng, alphabet));
  return v;
}

std::vector<std::uint8_t> structured_bytes(Rng& rng, std::size_t n) {
  std::vector<std::uint8_t> v;
  const auto kind = uniform_index(rng, 4);
  while (v.size() < n) {
    if (kind == 0) {
      v.push_back(static_cast<std::uint8_t>(v.size() % (1 + uniform_index(rng, 7))));
    } else if (kind == 1) {
      const auto run = 1 + uniform_index(rng, 600);
      const auto b = static_cast<std::uint8_t>(uniform_index(rng, 4));
      for (std::uint64_t r = 0; r < run; ++r) v.push_back(b);
    } else if (kind == 2 && v.size() > 8) {
      const auto off = 1 + uniform_index(rng, std::min<std::size_t>(v.size(), 5000));
      const auto len = 1 + uniform_index(rng, 300);
      const std::size_t from = v.size() - off;
      for (std::uint64_t r = 0; r < len; ++r) v.push_back(v[from + r]);
    } else {
      v.push_back(static_cast<std::uint8_t>(uniform_index(rng, 256)));
    }
  }
  v.resize(n);
  return v;
}

Frame winner_frame(const std::vector<std::uint8_t>& winners, std::size_t agents) {
  const std::size_t cells = winners.size();
  Frame f;
  f.weights = Tensor({agents + 1, cells});
  f.alive = Tensor({agents, cells});
  for (std::size_t i = 0; i < cells; ++i) {
    f.weights[winners[i] * cells + i] = 1.0f;
    if (winners[i] > 0) f.alive[(winners[i] - 1) * cells + i] = 1.0f;
  }
  return f;
}

Tensor alive_mass(const std::vector<float>& per_agent) {
  Tensor a({per_agent.size(), 4});
  for (std::size_t k = 0; k < per_agent.size(); ++k) a[k * 4 + 1] = per_agent[k];
  return a;
}

}  // namespace

TEST(SpeciesEntropy, Examples) {
  EXPECT_DOUBLE_EQ(species_entropy(alive_mass({0.5f, 0.5f})), 1.0);
  EXPECT_DOUBLE_EQ(species_entropy(alive_mass({0.0f, 0.9f, 0.0f})), 0.0);
  EXPECT_NEAR(species_entropy(alive_mass(std::vector<float>(7, 0.6f))), std::log2(7.0), 1e-12);
  EXPECT_EQ(species_entropy(alive_mass({0.0f, 0.0f, 0.0f})), 0.0);
}

TEST(Persistence, ThresholdIsStrict) {
  EXPECT_NEAR(persistence_threshold(7), 0.1 * std::log2(7.0), 1e-15);
  const std::vector<double> h{0.28, 0.29, 2.0, 0.0};
  EXPECT_DOUBLE_EQ(ecological_persistence(h, 7), 0.5);
  const double eps = persistence_threshold(7);
  EXPECT_DOUBLE_EQ(ecological_persistence(std::vector<double>{eps}, 7), 0.0);
}

TEST(Persistence, MonocultureAndCoexistence) {
  EXPECT_DOUBLE_EQ(ecological_persistence(std::vector<double>(50, 0.0), 3), 0.0);
  EXPECT_DOUBLE_EQ(ecological_persistence(std::vector<double>(50, std::log2(3.0)), 3), 1.0);
}

TEST(Persistence, MonotoneInThreshold) {
  Rng rng = make_stream(1, 1);
  std::vector<double> h(200);
  for (double& x : h) x = uniform(rng, 0.0, 3.0);
  double prev = 1.0;
  for (std::size_t n = 2; n <= 64; n *= 2) {
    const double ep = ecological_persistence(h, n);
    EXPECT_LE(ep, prev);
    prev = ep;
  }
}

TEST(Lz77, RepeatedBytesCompressWell) {
  std::vector<std::uint8_t> v(10000, 0x5a);
  EXPECT_LT(lz77_ratio(v), 0.05);
}

TEST(Lz77, RandomBytesDoNotCompress) {
  Rng rng = make_stream(2, 0);
  const auto v = random_bytes(rng, 10000);
  EXPECT_GE(static_cast<double>(lz77_compress(v).size()) / v.size(), 1.0);
  EXPECT_EQ(lz77_ratio(v), 1.0);
}

TEST(Lz77, SingleByteAndEmpty) {
  const std::vector<std::uint8_t> one{7};
  EXPECT_EQ(lz77_compress(one).size(), 2u);
  EXPECT_EQ(lz77_ratio(one), 1.0);
  EXPECT_THROW(lz77_ratio(std::vector<std::uint8_t>{}), Error);
}

TEST(Lz77, HandParse) {
  // "abcabcabcX": 3 literals, one match (offset 3, length 6), 1 literal.
  const std::vector<std::uint8_t> in{'a', 'b', 'c', 'a', 'b', 'c', 'a', 'b', 'c', 'X'};
  const std::vector<std::uint8_t> expect{0x08, 'a', 'b', 'c', 3, 0, 6, 'X'};
  EXPECT_EQ(lz77_compress(in), expect);
}

TEST(Lz77, SizeMatchesExhaustiveParse) {
  Rng rng = make_stream(3, 0);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 6000);
    const auto v = trial % 2 ? structured_bytes(rng, n) : random_bytes(rng, n, 2 + uniform_index(rng, 6));
    EXPECT_EQ(lz77_compress(v).size(), naive_lz77_size(v)) << "trial " << trial;
  }
}

TEST(Lz77, RoundTrip) {
  Rng rng = make_stream(4, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 3000);
    const auto v = trial % 2 ? structured_bytes(rng, n) : random_bytes(rng, n, 1 + uniform_index(rng, 256));
    ASSERT_EQ(lz77_decompress(lz77_compress(v)), v) << "trial " << trial;
  }
}

TEST(Lz77, RejectsCorruptStream) {
  EXPECT_THROW(lz77_decompress(std::vector<std::uint8_t>{0x01, 5, 0, 4}), Error);
  EXPECT_THROW(lz77_decompress(std::vector<std::uint8_t>{0x02, 'a', 1, 0}), Error);
}

TEST(EffectiveComplexity, ConstantMapIsZero) {
  const Frame f = winner_frame(std::vector<std::uint8_t>(1024, 2), 3);
  for (auto mode : {GridSymbols::kWinner, GridSymbols::kWinnerPacked, GridSymbols::kRgb}) {
    EXPECT_EQ(effective_complexity(f, mode, 32, 32), 0.0);
  }
}

TEST(EffectiveComplexity, RandomMapNearZero) {
  for (std::size_t n : {1u, 2u, 3u, 5u, 7u}) {
    Rng rng = make_stream(5, n);
    const Frame f = winner_frame(random_bytes(rng, 4096, n + 1), n);
    const auto g = symbolize(f, GridSymbols::kWinnerPacked, 64, 64);
    EXPECT_GT(normalized_entropy(g.symbols, g.alphabet), 0.99);
    EXPECT_LT(effective_complexity(g), 0.05) << "N=" << n;
  }
}

TEST(EffectiveComplexity, HalfOrderedBeatsBothExtremes) {
  Rng rng = make_stream(6, 0);
  std::vector<std::uint8_t> half(1024, 1);
  for (std::size_t i = 512; i < 1024; ++i) half[i] = static_cast<std::uint8_t>(uniform_index(rng, 4));
  const double mixed = effective_complexity(winner_frame(half, 3), GridSymbols::kWinnerPacked, 32, 32);
  const double ordered = effective_complexity(winner_frame(std::vector<std::uint8_t>(1024, 1), 3),
                                              GridSymbols::kWinnerPacked, 32, 32);
  const double noise = effective_complexity(winner_frame(random_bytes(rng, 1024, 4), 3),
                                            GridSymbols::kWinnerPacked, 32, 32);
  EXPECT_GT(mixed, ordered);
  EXPECT_GT(mixed, noise);
}

TEST(EffectiveComplexity, BoundedByCompressibility) {
  Rng rng = make_stream(7, 0);
  for (int trial = 0; trial < 50; ++trial) {
    auto bytes = structured_bytes(rng, 256);
    for (auto& b : bytes) b %= 4;
    const auto g = symbolize(winner_frame(bytes, 3), GridSymbols::kWinnerPacked, 16, 16);
    const double c = effective_complexity(g);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0 - lz77_ratio(g.bytes) + 1e-15);
  }
}

TEST(EffectiveComplexity, PackingLayout) {
  // Alphabet 3 -> 2 bits per cell, MSB first.
  const auto g = symbolize(winner_frame({1, 2, 0, 1, 2}, 2), GridSymbols::kWinnerPacked, 1, 5);
  EXPECT_EQ(g.bytes, (std::vector<std::uint8_t>{0b01100001, 0b10000000}));
  EXPECT_EQ(g.alphabet, 3u);
  const auto b = symbolize(winner_frame({1, 2, 0}, 2), GridSymbols::kWinner, 1, 3);
  EXPECT_EQ(b.bytes, (std::vector<std::uint8_t>{1, 2, 0}));
}

TEST(ComplexityReport, AggregatesFrames) {
  Trajectory t;
  std::vector<std::uint8_t> coexist(64);
  for (std::size_t i = 0; i < 64; ++i) coexist[i] = static_cast<std::uint8_t>(1 + i % 2);
  t.push_back(winner_frame(coexist, 2));
  t.push_back(winner_frame(std::vector<std::uint8_t>(64, 1), 2));
  const auto r = analyze_trajectory(t, 8, 8, GridSymbols::kWinnerPacked);
  ASSERT_EQ(r.species_entropy.size(), 2u);
  EXPECT_DOUBLE_EQ(r.species_entropy[0], 1.0);
  EXPECT_DOUBLE_EQ(r.persistence, 0.5);
  EXPECT_DOUBLE_EQ(r.entropy_mean, 0.5);
  EXPECT_DOUBLE_EQ(r.entropy_std, 0.5);
  for (double c : r.effective_complexity) {
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
}
