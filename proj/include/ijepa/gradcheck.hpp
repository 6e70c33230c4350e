#pragma once

#include "ijepa/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace ijepa {

struct GradProbe {
  std::string tensor;
  Index offset = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradProbe> probes;
  double max_rel_error = 0.0;
  std::string worst;
};

struct GradCheckOptions {
  int probes_per_tensor = 6;
  double eps = 1e-5;
  double floor = 1e-3;  // denominator floor for gradients that vanish analytically
  std::uint64_t seed = 0;
};

// Central finite differences over the encoder + predictor + loss composite on
// one synthetic image, in double precision. Parameters are jittered away from
// their init so zero biases and unit norm gains do not hide mistakes.
inline GradCheckReport gradcheck(const Config& base, const GradCheckOptions& opt = {}) {
  Config cfg = base;
  cfg.run.seed = opt.seed;
  auto state = init_state<double>(cfg);
  Rng rng = Rng::derive(opt.seed, "gradcheck");
  for (auto& nt : named_tensors(state.params)) {
    for (Index i = 0; i < nt.tensor->size(); ++i) nt.tensor->data()[i] += 0.05 * rng.normal();
  }
  state.target = state.params.encoder;
  for (auto& nt : named_tensors(state.target)) {
    for (Index i = 0; i < nt.tensor->size(); ++i) nt.tensor->data()[i] += 0.01 * rng.normal();
  }

  const PatchGrid grid = cfg.model.grid();
  Image img(cfg.model.image_size, cfg.model.image_size, cfg.model.channels);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  const Mat<double> patches = model_patches<double>(img, cfg.model);
  const auto pos = PositionTables<double>::make(grid, cfg.model.width, cfg.predictor.width);
  const auto masks = sample_batch(grid, cfg.masking, 1, rng);
  const Mask& context = masks.contexts.front();
  const std::vector<Mask>& targets = masks.targets.front();

  Trainable<double> grads = zeros_like(state.params);
  image_loss<double>(state.params, state.target, cfg, pos, patches, context, targets, &grads);

  auto loss_at = [&]() {
    return image_loss<double>(state.params, state.target, cfg, pos, patches, context, targets, nullptr).total;
  };

  GradCheckReport report;
  auto params = named_tensors(state.params);
  auto gtensors = named_tensors(grads);
  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat<double>& w = *params[t].tensor;
    const Mat<double>& g = *gtensors[t].tensor;
    const int n = static_cast<int>(std::min<Index>(opt.probes_per_tensor, w.size()));
    for (int k = 0; k < n; ++k) {
      const Index off = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(w.size())));
      const double saved = w.data()[off];
      w.data()[off] = saved + opt.eps;
      const double up = loss_at();
      w.data()[off] = saved - opt.eps;
      const double down = loss_at();
      w.data()[off] = saved;
      GradProbe p;
      p.tensor = params[t].name;
      p.offset = off;
      p.analytic = g.data()[off];
      p.numeric = (up - down) / (2.0 * opt.eps);
      p.rel_error = std::abs(p.analytic - p.numeric) /
                    std::max(std::abs(p.analytic) + std::abs(p.numeric), opt.floor);
      if (p.rel_error > report.max_rel_error) {
        report.max_rel_error = p.rel_error;
        report.worst = p.tensor + "[" + std::to_string(off) + "]";
      }
      report.probes.push_back(p);
    }
  }
  return report;
}

}  // namespace ijepa
