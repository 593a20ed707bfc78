#include "petri/substrate/world.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "petri/grad/tape.hpp"

namespace petri {

using grad::NodeId;
using grad::Shape;
using grad::Tape;

void ChannelLayout::validate() const {
  if (attack == 0 || defense == 0 || hidden == 0) throw ConfigError("channel counts must all be >= 1");
  if (attack != defense) throw ConfigError("attack and defense channel counts must be equal");
}

void SubstrateConfig::validate() const {
  layout.validate();
  if (height < 3 || width < 3) throw ConfigError("grid must be at least 3x3");
  if (agents == 0) throw ConfigError("need at least one agent");
  if (hidden_width == 0) throw ConfigError("hidden_width must be >= 1");
  if (!(alpha >= 0.0f && alpha < 1.0f)) throw ConfigError("alpha must lie in [0, 1)");
}

namespace {

void validate_hparams(const HyperParams& hp) {
  if (!(hp.learning_rate >= 0.0) || !std::isfinite(hp.learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (hp.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (hp.steps_per_update < 1) throw ConfigError("steps_per_update must be >= 1");
  if (!(hp.softmax_temp > 0.0)) throw ConfigError("softmax_temp must be > 0");
  if (!(hp.per_hid_upd > 0.0 && hp.per_hid_upd <= 1.0)) throw ConfigError("per_hid_upd must lie in (0, 1]");
}

Tensor uniform_tensor(Rng& rng, Shape shape, double bound) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(uniform(rng, -bound, bound));
  return t;
}

struct AgentLeaves {
  std::vector<NodeId> ids;
};

struct StepNodes {
  NodeId x;
  NodeId alive;
  NodeId weights;
  NodeId phi;
};

NodeId competition(Tape& tape, NodeId proposals, std::shared_ptr<const Tensor> presence, const ChannelLayout& layout,
                   std::size_t entities, std::size_t cells, double temp, NodeId* phi_out) {
  const std::size_t ca = layout.attack, cd = layout.defense;
  const NodeId a = tape.slice(proposals, 2, 0, ca);
  const NodeId d = tape.slice(proposals, 2, ca, ca + cd);
  const NodeId a_row = tape.reshape(a, {entities, 1, cells, ca});
  const NodeId a_col = tape.reshape(a, {1, entities, cells, ca});
  const NodeId d_row = tape.reshape(d, {entities, 1, cells, cd});
  const NodeId d_col = tape.reshape(d, {1, entities, cells, cd});
  const NodeId phi = tape.sub(tape.cosine(a_row, d_col), tape.cosine(d_row, a_col));
  if (phi_out) *phi_out = phi;
  NodeId psi = tape.sum(phi, 1);
  if (temp != 1.0) psi = tape.scale(psi, static_cast<float>(1.0 / temp));
  return tape.softmax(psi, 0, std::move(presence));
}

StepNodes build_step(Tape& tape, const WorldState& world, NodeId x, const Tensor& alive,
                     const std::vector<AgentLeaves>& leaves, const Tensor& noise, const Tensor* hidden_mask) {
  const SubstrateConfig& cfg = world.config;
  const std::size_t n = cfg.agents, cells = cfg.cells(), c = cfg.layout.total();

  auto presence = std::make_shared<Tensor>(Shape{n + 1, cells});
  std::fill_n(presence->data().begin(), cells, 1.0f);

  std::vector<NodeId> parts;
  parts.reserve(n + 1);
  parts.push_back(tape.constant(noise));
  NodeId gate{};
  if (hidden_mask) gate = tape.constant(*hidden_mask);
  for (std::size_t k = 0; k < n; ++k) {
    auto rows = std::make_shared<grad::RowIndex>(presence_rows(alive, k, cfg.height, cfg.width));
    for (std::uint32_t r : *rows) (*presence)[(k + 1) * cells + r] = 1.0f;
    if (rows->empty()) {
      parts.push_back(tape.constant(Tensor(Shape{cells, c})));
      continue;
    }
    const auto& id = leaves[k].ids;
    NodeId h = tape.neighborhood_matmul(x, id[AgentNet::kW1], rows, cfg.height, cfg.width);
    h = tape.tanh(tape.add(h, id[AgentNet::kB1]));
    const NodeId out = tape.add(tape.matmul(h, id[AgentNet::kW2]), id[AgentNet::kB2]);
    NodeId delta = tape.scatter_rows(out, rows, cells);
    if (hidden_mask) delta = tape.mul(delta, gate);
    parts.push_back(delta);
  }

  const NodeId proposals = tape.stack(parts);
  StepNodes s;
  s.weights = competition(tape, proposals, presence, cfg.layout, n + 1, cells, world.hparams.softmax_temp, &s.phi);
  const NodeId blend = tape.sum(tape.mul(tape.reshape(s.weights, {n + 1, cells, 1}), proposals), 0);
  s.x = tape.clip(tape.add(x, blend), -1.0f, 1.0f);

  const NodeId agent_w = tape.slice(s.weights, 0, 1, n + 1);
  Tensor survives(Shape{n, cells});
  const Tensor& w = tape.value(agent_w);
  for (std::size_t i = 0; i < survives.numel(); ++i) survives[i] = w[i] > cfg.alpha ? 1.0f : 0.0f;
  s.alive = tape.mul(agent_w, tape.constant(std::move(survives)));
  return s;
}

std::vector<AgentLeaves> add_leaves(Tape& tape, const WorldState& world) {
  std::vector<AgentLeaves> out(world.agents.size());
  for (std::size_t k = 0; k < world.agents.size(); ++k) {
    for (const Tensor& p : world.agents[k].params) out[k].ids.push_back(tape.parameter(p));
  }
  return out;
}

void resize_replica_vector(std::vector<Replica>& replicas, std::size_t count, Rng& world_rng) {
  if (replicas.empty()) throw Error("world has no replicas");
  const std::size_t original = replicas.size();
  if (count < original) {
    replicas.resize(count);
    return;
  }
  replicas.reserve(count);
  for (std::size_t i = original; i < count; ++i) {
    replicas.push_back(replicas[i % original]);
    replicas.back().rng = Rng(world_rng());
  }
}

}  // namespace

SeedPatches seed_patches(std::size_t height, std::size_t width, std::size_t agents) {
  if (agents == 0) throw ConfigError("need at least one agent");
  SeedPatches out;
  out.side = std::max<std::size_t>(4, height / 8);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(agents))));
  const std::size_t rows = (agents + cols - 1) / cols;
  const std::size_t cell_h = height / rows, cell_w = width / cols;
  if (out.side > cell_h || out.side > cell_w) {
    throw ConfigError("cannot place " + std::to_string(agents) + " disjoint seed patches of side " +
                      std::to_string(out.side) + " on a " + std::to_string(height) + "x" + std::to_string(width) +
                      " grid");
  }
  for (std::size_t k = 0; k < agents; ++k) {
    const std::size_t r = k / cols, c = k % cols;
    out.origins.emplace_back(r * cell_h + (cell_h - out.side) / 2, c * cell_w + (cell_w - out.side) / 2);
  }
  return out;
}

WorldState init_world(const SubstrateConfig& config, const HyperParams& hparams, std::uint64_t seed) {
  config.validate();
  validate_hparams(hparams);
  if (config.height < 8 || config.width < 8) throw ConfigError("grid must be at least 8x8");
  const SeedPatches patches = seed_patches(config.height, config.width, config.agents);

  WorldState world;
  world.config = config;
  world.hparams = hparams;
  world.rng = make_stream(seed, 0);

  const std::size_t c = config.layout.total(), hid = config.hidden_width;
  for (std::size_t k = 0; k < config.agents; ++k) {
    AgentNet net;
    net.params.push_back(uniform_tensor(world.rng, {9 * c, hid}, 1.0 / std::sqrt(9.0 * c)));
    net.params.push_back(uniform_tensor(world.rng, {hid}, 1.0 / std::sqrt(9.0 * c)));
    net.params.push_back(uniform_tensor(world.rng, {hid, c}, 1.0 / std::sqrt(static_cast<double>(hid))));
    net.params.push_back(Tensor(Shape{c}));
    net.adam = grad::AdamState::for_params(net.params);
    world.agents.push_back(std::move(net));
  }

  Tensor alive(Shape{config.agents, config.cells()});
  for (std::size_t k = 0; k < config.agents; ++k) {
    const auto [y0, x0] = patches.origins[k];
    for (std::size_t y = y0; y < y0 + patches.side; ++y) {
      for (std::size_t x = x0; x < x0 + patches.side; ++x) alive[k * config.cells() + y * config.width + x] = 1.0f;
    }
  }
  for (long b = 0; b < hparams.batch_size; ++b) {
    Tensor x = uniform_tensor(world.rng, {config.cells(), c}, 0.1);
    world.replicas.push_back(Replica{std::move(x), alive, make_stream(seed, 1 + static_cast<std::uint64_t>(b))});
  }
  return world;
}

std::vector<std::uint32_t> presence_rows(const Tensor& alive, std::size_t k, std::size_t height, std::size_t width) {
  const std::size_t cells = height * width;
  std::vector<char> mark(cells, 0);
  const float* a = alive.data().data() + k * cells;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (!(a[y * width + x] > 0.0f)) continue;
      for (std::size_t dy = 0; dy < 3; ++dy) {
        for (std::size_t dx = 0; dx < 3; ++dx) {
          mark[((y + height - 1 + dy) % height) * width + (x + width - 1 + dx) % width] = 1;
        }
      }
    }
  }
  std::vector<std::uint32_t> rows;
  for (std::size_t i = 0; i < cells; ++i) {
    if (mark[i]) rows.push_back(static_cast<std::uint32_t>(i));
  }
  return rows;
}

Tensor environment_noise(Rng& rng, std::size_t cells, std::size_t channels) {
  Tensor e(Shape{cells, channels});
  std::vector<double> v(channels);
  for (std::size_t i = 0; i < cells; ++i) {
    double norm = 0.0;
    for (double& x : v) {
      x = uniform(rng, -1.0, 1.0);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < channels; ++j) e[i * channels + j] = norm > 0.0 ? static_cast<float>(v[j] / norm) : 0.0f;
  }
  return e;
}

Tensor hidden_update_mask(Rng& rng, std::size_t cells, const ChannelLayout& layout, double p) {
  const std::size_t c = layout.total(), first_hidden = layout.attack + layout.defense;
  Tensor m(Shape{cells, c}, 1.0f);
  for (std::size_t i = 0; i < cells; ++i) {
    if (bernoulli(rng, p)) continue;
    for (std::size_t j = first_hidden; j < c; ++j) m[i * c + j] = 0.0f;
  }
  return m;
}

ReplicaStep step_replica(const WorldState& world, const Replica& replica, const Tensor& noise,
                         const Tensor* hidden_mask) {
  Tape tape;
  const auto leaves = add_leaves(tape, world);
  const StepNodes s = build_step(tape, world, tape.constant(replica.x), replica.alive, leaves, noise, hidden_mask);
  return ReplicaStep{Replica{tape.value(s.x), tape.value(s.alive), replica.rng},
                     StepDiagnostics{tape.value(s.phi), tape.value(s.weights)}};
}

StepDiagnostics compete(const Tensor& proposals, const Tensor& presence, const ChannelLayout& layout,
                        double softmax_temp) {
  layout.validate();
  if (proposals.rank() != 3 || proposals.dim(2) != layout.total()) throw ShapeError("compete: proposals must be [N+1, cells, C]");
  Tape tape;
  NodeId phi{};
  const NodeId w = competition(tape, tape.constant(proposals), std::make_shared<Tensor>(presence), layout,
                               proposals.dim(0), proposals.dim(1), softmax_temp, &phi);
  return StepDiagnostics{tape.value(phi), tape.value(w)};
}

std::vector<StepDiagnostics> step(WorldState& world) {
  const std::size_t cells = world.config.cells(), c = world.config.layout.total();
  std::vector<StepDiagnostics> diags;
  std::vector<Replica> next;
  for (const Replica& rep : world.replicas) {
    Rng rng = rep.rng;
    const Tensor noise = environment_noise(rng, cells, c);
    Tensor gate;
    const bool gated = world.hparams.per_hid_upd < 1.0;
    if (gated) gate = hidden_update_mask(rng, cells, world.config.layout, world.hparams.per_hid_upd);
    ReplicaStep r = step_replica(world, rep, noise, gated ? &gate : nullptr);
    r.next.rng = rng;
    next.push_back(std::move(r.next));
    diags.push_back(std::move(r.diagnostics));
  }
  world.replicas = std::move(next);
  world.steps += 1;
  return diags;
}

double loss_aliveness(const WorldState& world, std::size_t k) {
  const std::size_t cells = world.config.cells();
  double mass = 0.0;
  for (const Replica& rep : world.replicas) {
    const float* a = rep.alive.data().data() + k * cells;
    for (std::size_t i = 0; i < cells; ++i) mass += a[i];
  }
  return -std::log(kLossEps + mass / static_cast<double>(world.replicas.size()));
}

SegmentResult run_segment(const WorldState& world, bool with_grads) {
  const SubstrateConfig& cfg = world.config;
  const HyperParams& hp = world.hparams;
  validate_hparams(hp);
  const std::size_t n = cfg.agents, cells = cfg.cells(), c = cfg.layout.total();
  const auto tau = static_cast<std::size_t>(hp.steps_per_update);
  const bool gated = hp.per_hid_upd < 1.0;

  SegmentResult res;
  res.rng = world.rng;
  res.replicas = world.replicas;
  resize_replica_vector(res.replicas, static_cast<std::size_t>(hp.batch_size), res.rng);
  const double batch = static_cast<double>(res.replicas.size());

  std::vector<double> mass(n, 0.0);
  if (with_grads) {
    res.grads.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      for (const Tensor& p : world.agents[k].params) res.grads[k].emplace_back(p.shape());
    }
  }

  for (std::size_t b = 0; b < res.replicas.size(); ++b) {
    Replica& rep = res.replicas[b];
    Tape tape;
    auto leaves = add_leaves(tape, world);
    NodeId x = tape.constant(rep.x);
    Tensor alive = rep.alive;
    NodeId alive_node{};
    for (std::size_t s = 0; s < tau; ++s) {
      if (!with_grads && s > 0) {
        // Nothing to differentiate; keep only the live step on the tape.
        Tensor carry = tape.value(x);
        tape = Tape();
        leaves = add_leaves(tape, world);
        x = tape.constant(std::move(carry));
      }
      const Tensor noise = environment_noise(rep.rng, cells, c);
      Tensor gate;
      if (gated) gate = hidden_update_mask(rep.rng, cells, cfg.layout, hp.per_hid_upd);
      const StepNodes st = build_step(tape, world, x, alive, leaves, noise, gated ? &gate : nullptr);
      x = st.x;
      alive = tape.value(st.alive);
      alive_node = st.alive;
      if (b == 0) res.frames.push_back(Frame{world.steps + s + 1, alive, tape.value(st.weights)});
    }
    for (std::size_t k = 0; k < n; ++k) {
      const NodeId total = tape.sum(tape.slice(alive_node, 0, k, k + 1));
      mass[k] += tape.value(total).item();
      if (!with_grads) continue;
      const auto g = tape.backward(total, leaves[k].ids);
      for (std::size_t p = 0; p < g.size(); ++p) {
        for (std::size_t i = 0; i < g[p].numel(); ++i) res.grads[k][p][i] += g[p][i];
      }
    }
    rep.x = tape.value(x);
    rep.alive = std::move(alive);
  }

  for (std::size_t k = 0; k < n; ++k) {
    const double mean_mass = mass[k] / batch;
    res.losses.push_back(-std::log(kLossEps + mean_mass));
    if (!with_grads) continue;
    // L_k = -log(eps + mean mass): chain rule onto the summed replica gradients.
    const double factor = -1.0 / ((kLossEps + mean_mass) * batch);
    for (Tensor& g : res.grads[k]) {
      for (float& v : g.data()) v = static_cast<float>(v * factor);
    }
  }
  return res;
}

Trajectory train_segment(WorldState& world) {
  const bool learn = world.hparams.learning_rate > 0.0;
  SegmentResult res = run_segment(world, learn);
  if (learn) {
    for (const auto& gs : res.grads) {
      for (const Tensor& g : gs) {
        if (!g.all_finite()) throw NonFiniteError("non-finite gradient in train_segment");
      }
    }
    for (std::size_t k = 0; k < world.agents.size(); ++k) {
      grad::adam_step(world.agents[k].params, res.grads[k], world.agents[k].adam, world.hparams.learning_rate);
    }
  }
  world.replicas = std::move(res.replicas);
  world.rng = res.rng;
  world.steps += static_cast<std::uint64_t>(world.hparams.steps_per_update);
  world.segments += 1;
  return std::move(res.frames);
}

Trajectory rollout_meta_iteration(WorldState& world, std::size_t t_world, const SegmentHook& before_segment) {
  if (t_world == 0) throw ConfigError("t_world must be >= 1");
  Trajectory traj;
  if (!world.healthy) return traj;
  for (std::size_t s = 0; s < t_world; ++s) {
    if (before_segment) before_segment(world, s);
    try {
      Trajectory seg = train_segment(world);
      std::move(seg.begin(), seg.end(), std::back_inserter(traj));
    } catch (const NonFiniteError&) {
      world.healthy = false;
      break;
    }
  }
  return traj;
}

void resize_replicas(WorldState& world, std::size_t count) {
  if (count == 0) throw ConfigError("replica count must be >= 1");
  resize_replica_vector(world.replicas, count, world.rng);
}

}  // namespace petri
