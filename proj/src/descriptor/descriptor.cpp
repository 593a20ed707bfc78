#include "petri/descriptor/descriptor.hpp"

#include <cmath>

namespace petri {

SpeciesFractions species_fractions(const Trajectory& trajectory) {
  if (trajectory.empty()) throw Error("species_fractions: empty trajectory");
  SpeciesFractions f;
  f.frames = trajectory.size();
  f.entities = trajectory.front().weights.dim(0);
  f.values.assign(f.frames * f.entities, 0.0);
  for (std::size_t t = 0; t < f.frames; ++t) {
    const Tensor& w = trajectory[t].weights;
    if (w.dim(0) != f.entities) throw ShapeError("species_fractions: entity count changes within trajectory");
    const std::size_t cells = w.dim(1);
    double total = 0.0;
    for (std::size_t e = 0; e < f.entities; ++e) {
      double mass = 0.0;
      for (std::size_t i = 0; i < cells; ++i) mass += w[e * cells + i];
      f.values[t * f.entities + e] = mass;
      total += mass;
    }
    if (total > 0.0) {
      for (std::size_t e = 0; e < f.entities; ++e) f.values[t * f.entities + e] /= total;
    }
  }
  return f;
}

DescriptorFeatures fraction_features(const SpeciesFractions& f) {
  if (f.frames == 0) throw Error("fraction_features: no frames");
  DescriptorFeatures out;
  out.mean.assign(f.entities, 0.0);
  out.stddev.assign(f.entities, 0.0);
  out.turnover.assign(f.entities, 0.0);
  const double frames = static_cast<double>(f.frames);
  for (std::size_t e = 0; e < f.entities; ++e) {
    double sum = 0.0;
    for (std::size_t t = 0; t < f.frames; ++t) sum += f.at(t, e);
    const double mu = sum / frames;
    double var = 0.0;
    for (std::size_t t = 0; t < f.frames; ++t) var += (f.at(t, e) - mu) * (f.at(t, e) - mu);
    double turn = 0.0;
    for (std::size_t t = 0; t + 1 < f.frames; ++t) turn += std::abs(f.at(t + 1, e) - f.at(t, e));
    out.mean[e] = mu;
    out.stddev[e] = std::sqrt(var / frames);
    out.turnover[e] = f.frames > 1 ? turn / (frames - 1.0) : 0.0;
  }
  return out;
}

BehaviorDescriptor normalize_features(const DescriptorFeatures& features) {
  BehaviorDescriptor d;
  auto& v = d.values;
  v.insert(v.end(), features.mean.begin(), features.mean.end());
  v.insert(v.end(), features.stddev.begin(), features.stddev.end());
  v.insert(v.end(), features.turnover.begin(), features.turnover.end());
  v.push_back(features.winner_entropy);
  v.push_back(features.mask_change);
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return d;
}

std::vector<std::uint8_t> winner_map(const Frame& frame) {
  const Tensor& w = frame.weights;
  const std::size_t entities = w.dim(0), cells = w.dim(1);
  if (entities > 256) throw ShapeError("winner_map: more than 256 entities");
  std::vector<std::uint8_t> out(cells, 0);
  for (std::size_t i = 0; i < cells; ++i) {
    float best = w[i];
    for (std::size_t e = 1; e < entities; ++e) {
      if (w[e * cells + i] > best) {
        best = w[e * cells + i];
        out[i] = static_cast<std::uint8_t>(e);
      }
    }
  }
  return out;
}

DescriptorFeatures trajectory_features(const Trajectory& trajectory, std::size_t agents) {
  if (trajectory.size() < 2) throw Error("behavior_descriptor: trajectory needs at least 2 frames");
  if (trajectory.front().weights.dim(0) != agents + 1) throw ShapeError("behavior_descriptor: agent count mismatch");
  DescriptorFeatures out = fraction_features(species_fractions(trajectory));

  std::vector<double> counts(agents + 1, 0.0);
  double pooled = 0.0;
  for (const Frame& frame : trajectory) {
    for (std::uint8_t k : winner_map(frame)) counts[k] += 1.0;
    pooled += static_cast<double>(frame.weights.dim(1));
  }
  for (double c : counts) {
    if (c > 0.0) out.winner_entropy -= (c / pooled) * std::log2(c / pooled);
  }

  double change = 0.0;
  for (std::size_t t = 0; t + 1 < trajectory.size(); ++t) {
    const Tensor& a = trajectory[t].alive;
    const Tensor& b = trajectory[t + 1].alive;
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(static_cast<double>(b[i]) - a[i]);
    change += a.numel() > 0 ? s / static_cast<double>(a.numel()) : 0.0;
  }
  out.mask_change = change / static_cast<double>(trajectory.size() - 1);
  return out;
}

BehaviorDescriptor behavior_descriptor(const Trajectory& trajectory, std::size_t agents) {
  return normalize_features(trajectory_features(trajectory, agents));
}

}  // namespace petri
