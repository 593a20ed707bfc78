#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "petri/common.hpp"
#include "petri/grad/adam.hpp"
#include "petri/grad/tensor.hpp"

namespace petri {

using grad::Tensor;

struct ChannelLayout {
  std::size_t attack = 4;
  std::size_t defense = 4;
  std::size_t hidden = 8;

  std::size_t total() const { return attack + defense + hidden; }
  void validate() const;
};

struct HyperParams {
  double learning_rate = 3e-4;
  long batch_size = 8;
  long steps_per_update = 4;
  double softmax_temp = 1.0;
  double per_hid_upd = 1.0;

  bool operator==(const HyperParams&) const = default;
};

struct SubstrateConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t agents = 3;
  ChannelLayout layout;
  std::size_t hidden_width = 64;
  float alpha = 0.4f;

  std::size_t cells() const { return height * width; }
  void validate() const;
};

/// Per-cell network: flattened 3x3 neighborhood -> dense(hidden) -> tanh -> dense(C).
struct AgentNet {
  enum Param : std::size_t { kW1, kB1, kW2, kB2, kParamCount };
  /// w1 [9C, hidden], b1 [hidden], w2 [hidden, C], b2 [C].
  std::vector<Tensor> params;
  grad::AdamState adam;
};

/// One grid replica. Rows of x and columns of alive index cells row-major.
/// Each replica draws its own environment noise.
struct Replica {
  Tensor x;      // [H*W, C]
  Tensor alive;  // [N, H*W]
  Rng rng;
};

struct WorldState {
  SubstrateConfig config;
  HyperParams hparams;
  std::vector<AgentNet> agents;
  std::vector<Replica> replicas;
  std::uint64_t steps = 0;
  std::uint64_t segments = 0;
  Rng rng;
  bool healthy = true;
};

/// What the descriptor, analysis and rendering code consume: replica 0 after
/// one step.
struct Frame {
  std::uint64_t step = 0;
  Tensor alive;    // [N, H*W]
  Tensor weights;  // [N+1, H*W], row 0 is the environment
};

using Trajectory = std::vector<Frame>;

struct StepDiagnostics {
  Tensor phi;      // [N+1, N+1, H*W]
  Tensor weights;  // [N+1, H*W]
};

WorldState init_world(const SubstrateConfig& config, const HyperParams& hparams, std::uint64_t seed);

/// Side length and top-left corners of the initial agent patches.
struct SeedPatches {
  std::size_t side = 0;
  std::vector<std::pair<std::size_t, std::size_t>> origins;
};
SeedPatches seed_patches(std::size_t height, std::size_t width, std::size_t agents);

/// One untrained update of every replica. Returns per-replica diagnostics.
std::vector<StepDiagnostics> step(WorldState& world);

/// -log(eps + sum of agent k's aliveness / B) on the current state.
double loss_aliveness(const WorldState& world, std::size_t k);

inline constexpr double kLossEps = 1e-8;

struct SegmentResult {
  std::vector<Replica> replicas;
  Trajectory frames;
  std::vector<double> losses;
  /// grads[k] holds dL_k/dtheta_k in AgentNet::params order. Empty unless requested.
  std::vector<std::vector<Tensor>> grads;
  Rng rng;
};

/// Runs τ steps on copies of the world's replicas without touching `world`.
/// Replica count follows hparams.batch_size.
SegmentResult run_segment(const WorldState& world, bool with_grads);

/// τ steps, one Adam step per agent, then commits the new state.
Trajectory train_segment(WorldState& world);

/// Hook invoked before every segment with the segment index.
using SegmentHook = std::function<void(WorldState&, std::size_t)>;

/// Runs t_world segments. A non-finite value marks the world unhealthy and
/// truncates the trajectory to the completed segments.
Trajectory rollout_meta_iteration(WorldState& world, std::size_t t_world, const SegmentHook& before_segment = {});

/// Resizes the replica set to `count`, cloning existing replicas cyclically.
/// Clones get a fresh noise stream seeded from the world rng.
void resize_replicas(WorldState& world, std::size_t count);

/// Uniform(-1, 1) noise, L2-normalized per cell. [cells, C]
Tensor environment_noise(Rng& rng, std::size_t cells, std::size_t channels);

/// Per-cell Bernoulli(p) gate on hidden channels, 1 on attack/defense. [cells, C]
Tensor hidden_update_mask(Rng& rng, std::size_t cells, const ChannelLayout& layout, double p);

struct ReplicaStep {
  Replica next;
  StepDiagnostics diagnostics;
};

/// One update of a single replica with caller-supplied noise. `hidden_mask`
/// may be null. The replica's rng is carried over untouched.
ReplicaStep step_replica(const WorldState& world, const Replica& replica, const Tensor& noise,
                         const Tensor* hidden_mask);

/// Competition on explicit proposals [N+1, cells, C] (row 0 = environment)
/// with a presence mask [N+1, cells].
StepDiagnostics compete(const Tensor& proposals, const Tensor& presence, const ChannelLayout& layout,
                        double softmax_temp);

/// Indices of cells whose toroidal 3x3 neighborhood holds any alive > 0 in
/// row `k` of `alive` ([N, H*W]).
std::vector<std::uint32_t> presence_rows(const Tensor& alive, std::size_t k, std::size_t height, std::size_t width);

}  // namespace petri
