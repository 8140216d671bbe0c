#pragma once

// Small models shared by the unit and acceptance tests.

#include "fclgan/fclgan.hpp"

namespace probe {

using namespace fclgan;

/// Two-meta LED generator small enough for finite differences on 8x8 inputs.
inline GeneratorSpec two_meta_generator() {
  GeneratorSpec g;
  g.base_width = 4;
  g.allocation = {0, 1, 1};
  return g;
}

/// Spectral settings valid on 8x8 images: a 4x4 crop of 2x2 chunks. The
/// wider sigmoid keeps random 8x8 spectra off the saturated tails so the
/// contrastive term carries a measurable gradient.
inline SpectralConfig small_spectral() {
  SpectralConfig s;
  s.chunk = 2;
  s.crop_fraction = 0.5;
  s.temperature = 4.0;
  return s;
}

/// One strided leaky meta and a 1x1 head; accepts inputs from 2x2 up.
template <typename T>
Model<T> tiny_critic(std::mt19937_64& rng, int width = 4) {
  auto net = std::make_unique<Sequential<T>>();
  net->push("layer1", build_basic_meta<T>({3, width, 3, 2, false, NormKind::none, Activation::leaky_relu}, rng));
  net->push("head", build_basic_meta<T>({width, 1, 1, 1, false, NormKind::none, Activation::none}, rng));
  return Model<T>("critic", std::move(net), 1, 2);
}

/// A 1x1 convolution initialized to the identity map.
template <typename T>
Model<T> identity_generator(int channels = 3) {
  std::mt19937_64 rng(0);
  auto net = std::make_unique<Sequential<T>>();
  net->push("head", build_basic_meta<T>({channels, channels, 1, 1, false, NormKind::none, Activation::none}, rng));
  Model<T> m("generator", std::move(net), 1, 1);
  for (auto& p : m.parameters()) {
    auto& v = p.var.values();
    std::fill(v.begin(), v.end(), T(0));
    if (p.name.ends_with("weight"))
      for (int c = 0; c < channels; ++c) v[static_cast<std::size_t>(c * channels + c)] = T(1);
  }
  return m;
}

/// Parameters of both generators, then a fixed random subset is checked.
template <typename T>
std::vector<Var<T>> generator_vars(TrainModels<T>& m) {
  std::vector<Var<T>> out;
  for (auto* g : {&m.g_b2s, &m.g_s2b})
    for (auto& p : g->parameters()) out.push_back(p.var);
  return out;
}

/// Inputs, models and negatives for a gradient check of the full generator
/// objective with every term (adversarial, cycle, soft contrastive, TV) active.
struct ObjectiveProbe {
  TrainModels<double> models;
  Var<double> b, s;
  StepNegatives<double> negatives;
  SpectralConfig spectral = small_spectral();

  static ObjectiveProbe make(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto g1 = build_generator<double>(two_meta_generator(), rng);
    auto g2 = build_generator<double>(two_meta_generator(), rng);
    auto d1 = tiny_critic<double>(rng);
    auto d2 = tiny_critic<double>(rng);
    ObjectiveProbe p{{std::move(g1), std::move(g2), std::move(d1), std::move(d2)}, {}, {}, {}};
    // Unit-variance weights keep the tiny generators from producing near-constant outputs.
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& [name, m] : p.models.named())
      for (auto& prm : m->parameters())
        if (prm.name.ends_with("weight"))
          for (auto& v : prm.var.values()) v = nd(rng);
    std::uniform_real_distribution<double> u(-1, 1);
    auto img = [&](std::size_t n) {
      std::vector<double> v(n * 3 * 8 * 8);
      for (auto& e : v) e = u(rng);
      return Var<double>::from({n, 3, 8, 8}, v);
    };
    p.b = img(2);
    p.s = img(2);
    p.negatives.deblur = constant_reps(img(3), p.spectral);
    p.negatives.reblur = constant_reps(img(3), p.spectral);
    for (auto& [name, m] : p.models.named()) {
      m->set_training(true);
      m->set_requires_grad(name[0] == 'g');
    }
    return p;
  }

  Var<double> loss(const LossWeights& w = {}) {
    return generator_objective(models, b, s, negatives, spectral, 0.07, w).total;
  }
};

}  // namespace probe
