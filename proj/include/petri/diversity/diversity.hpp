#pragma once

#include <vector>

#include "petri/diversity/embedder.hpp"

namespace petri {

/// embeddings[world][t]; every world must have the same number of timesteps.
/// D_i = mean over t of the median over j != i of 1 - <z_i, z_j>.
/// Fewer than two worlds gives all zeros.
std::vector<double> diversity_scores(const std::vector<std::vector<Embedding>>& embeddings);

/// Median with the midpoint convention for even counts. Reorders `values`.
double median_inplace(std::vector<double>& values);

/// Frame indices sampled from a trajectory of `length`, aligned by relative
/// time: S = max(1, floor(shortest / stride)) samples at round((j+1) length / S) - 1.
std::vector<std::size_t> sample_frame_indices(std::size_t length, std::size_t shortest, std::size_t stride);

}  // namespace petri
