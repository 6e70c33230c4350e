#pragma once

#include "ijepa/backbone.hpp"
#include "ijepa/checkpoint.hpp"
#include "ijepa/config.hpp"
#include "ijepa/core.hpp"
#include "ijepa/dataset.hpp"
#include "ijepa/masking.hpp"
#include "ijepa/objective.hpp"
#include "ijepa/optim.hpp"
#include "ijepa/predictor.hpp"
#include "ijepa/schedule.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace ijepa {

// Parameters the optimizer owns: context encoder, predictor and (pixel
// ablation only) the pixel head. The target encoder lives outside and only
// changes through ema_update.
template <class T>
struct Trainable {
  using Scalar = T;
  EncoderParams<T> encoder;
  PredictorParams<T> predictor;
  std::optional<PixelHead<T>> pixel_head;

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    EncoderParams<T>::visit(s.encoder, p + "context_encoder/", f);
    PredictorParams<T>::visit(s.predictor, p + "predictor/", f);
    if (s.pixel_head) PixelHead<T>::visit(*s.pixel_head, p + "predictor/", f);
  }
};

template <class T>
struct TrainState {
  Config config;
  Trainable<T> params;
  EncoderParams<T> target;
  AdamWState<Trainable<T>> adam;
  Trainable<T> grads;
  EncoderParams<T> target_grads;  // never written; stays zero
  long step = 0;
};

template <class T>
TrainState<T> init_state(const Config& cfg) {
  validate(cfg);
  Rng rng = Rng::derive(cfg.run.seed, "init");
  TrainState<T> s;
  s.config = cfg;
  s.params.encoder = EncoderParams<T>::init(cfg.model, rng);
  s.params.predictor = PredictorParams<T>::init(cfg.predictor, cfg.model, rng);
  if (cfg.objective.target_type == TargetType::kPixels) {
    s.params.pixel_head = PixelHead<T>::init(cfg.model.width, cfg.model.patch_dim(), rng);
  }
  s.target = s.params.encoder;
  s.adam = AdamWState<Trainable<T>>::for_params(s.params);
  s.grads = zeros_like(s.params);
  s.target_grads = zeros_like(s.target);
  return s;
}

// Loss for one image, accumulating scaled gradients into `grads` when given.
template <class T>
LossReport image_loss(const Trainable<T>& p, const EncoderParams<T>& target, const Config& cfg, const PositionTables<T>& pos,
                      const Mat<T>& patch_vectors, const Mask& context, const std::vector<Mask>& targets,
                      Trainable<T>* grads, T grad_scale = T(1)) {
  const bool pixels = cfg.objective.target_type == TargetType::kPixels;
  const LossOptions lopt{cfg.objective.normalize_per_patch};
  EncoderCache<T> ecache;
  const Mat<T> ctx = encode_visible<T>(p.encoder, cfg.model, patch_vectors, context.indices, pos.encoder,
                                       grads != nullptr ? &ecache : nullptr);
  std::vector<PredictorCache<T>> pcache(targets.size());
  std::vector<TokenSequence<T>> preds;
  preds.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    preds.push_back({targets[i].indices, predictor_forward<T>(p.predictor, cfg.predictor, pos.predictor, ctx, context.indices,
                                                              targets[i].indices,
                                                              grads != nullptr ? &pcache[i] : nullptr)});
  }
  std::vector<Mat<T>> dout;
  LossReport report;
  std::vector<TokenSequence<T>> pixel_preds;
  if (pixels) {
    if (!p.pixel_head) throw ContractViolation("pixel targets need a pixel head");
    for (const auto& pr : preds) pixel_preds.push_back({pr.indices, linear(pr.embeddings, p.pixel_head->w, p.pixel_head->b)});
    report = compute_pixel_loss(pixel_preds, patch_vectors, targets, lopt, grads != nullptr ? &dout : nullptr);
  } else {
    const auto tgt = compute_targets<T>(target, cfg.model, patch_vectors, targets, pos.encoder, cfg.objective.target_mask_mode);
    report = compute_loss(preds, tgt, lopt, grads != nullptr ? &dout : nullptr);
  }
  if (grads == nullptr) return report;

  Mat<T> dctx = Mat<T>::Zero(ctx.rows(), ctx.cols());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Mat<T> d = dout[i] * grad_scale;
    if (pixels) d = linear_backward(preds[i].embeddings, p.pixel_head->w, d, grads->pixel_head->w, grads->pixel_head->b);
    dctx += predictor_backward(p.predictor, cfg.predictor, pcache[i], d, grads->predictor);
  }
  encode_visible_backward(p.encoder, cfg.model, ecache, dctx, grads->encoder);
  return report;
}

struct StepReport {
  ScheduleState schedule;
  LossReport loss;
  double context_ratio = 0.0;
  bool skipped = false;
  std::string event;
};

// Pre-patchified training corpus plus the deterministic epoch ordering.
template <class T>
struct TrainData {
  PatchGrid grid;
  std::vector<Mat<T>> patches;

  static TrainData from(const Dataset& ds, const ViTConfig& model) {
    if (ds.height != model.image_size || ds.width != model.image_size || ds.channels != model.channels) {
      throw ConfigError("dataset images are " + std::to_string(ds.height) + "x" + std::to_string(ds.width) + "x" +
                        std::to_string(ds.channels) + " but the model expects " + std::to_string(model.image_size) +
                        "x" + std::to_string(model.image_size) + "x" + std::to_string(model.channels));
    }
    TrainData d;
    d.grid = model.grid();
    d.patches.reserve(ds.size());
    for (const Image& img : ds.images) d.patches.push_back(model_patches<T>(img, model));
    return d;
  }

  std::size_t size() const { return patches.size(); }
};

inline Dataset load_training_data(const Config& cfg) {
  if (!cfg.data.path.empty()) return load_dataset(cfg.data.path);
  SyntheticSpec spec;
  spec.n_images = cfg.data.n_images;
  spec.size = cfg.model.image_size;
  spec.seed = cfg.data.seed;
  return make_synthetic(spec);
}

// Image indices used at `step`: a seeded full shuffle per epoch, full batches only.
inline std::vector<int> batch_indices(const Config& cfg, const Schedule& sched, std::size_t dataset_size, long step) {
  const long epoch = step / sched.steps_per_epoch;
  const long within = step % sched.steps_per_epoch;
  std::vector<int> order(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) order[i] = static_cast<int>(i);
  Rng rng = Rng::derive(cfg.run.seed, "shuffle", static_cast<std::uint64_t>(epoch));
  rng.shuffle(order);
  const std::size_t bs = static_cast<std::size_t>(std::min<long>(cfg.optim.batch_size, static_cast<long>(dataset_size)));
  const auto begin = order.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(within) * bs);
  return {begin, begin + static_cast<std::ptrdiff_t>(bs)};
}

// Batch gradients are accumulated in a fixed number of chunks (contiguous
// image ranges) and reduced in chunk order, so the result does not depend on
// the number of worker threads.
inline constexpr int kGradChunks = 8;

template <class F>
void run_chunks(int n_chunks, int workers, F&& fn) {
  workers = std::clamp(workers, 1, n_chunks);
  if (workers == 1) {
    for (int c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int c = w; c < n_chunks; c += workers) fn(c);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// One iteration: masks -> context forward -> per-block predictor -> targets
// -> loss -> backward -> AdamW on context encoder + predictor -> EMA.
template <class T>
StepReport train_step(TrainState<T>& s, const TrainData<T>& data, const Schedule& sched, const PositionTables<T>& pos) {
  const Config& cfg = s.config;
  StepReport rep;
  rep.schedule = schedule_at(sched, s.step);
  const std::vector<int> idx = batch_indices(cfg, sched, data.size(), s.step);
  Rng rng = Rng::derive(cfg.run.seed, "masks", static_cast<std::uint64_t>(s.step));

  std::optional<MaskedBatch> batch;
  for (int attempt = 0; attempt < 2 && !batch; ++attempt) {
    try {
      batch = sample_batch(data.grid, cfg.masking, static_cast<int>(idx.size()), rng);
    } catch (const SamplerExhausted& e) {
      rep.event = std::string("sampler exhausted: ") + e.what();
    }
  }
  if (!batch) {
    rep.skipped = true;
    s.step += 1;
    return rep;
  }
  rep.context_ratio = static_cast<double>(batch->context_size) / data.grid.n_patches();

  const int n = static_cast<int>(idx.size());
  const int n_chunks = std::min(kGradChunks, n);
  std::vector<Trainable<T>> chunk_grads(static_cast<std::size_t>(n_chunks), zeros_like(s.params));
  std::vector<LossReport> reports(static_cast<std::size_t>(n));
  const T scale = static_cast<T>(1.0 / n);
  run_chunks(n_chunks, cfg.run.workers, [&](int c) {
    const int lo = c * n / n_chunks;
    const int hi = (c + 1) * n / n_chunks;
    for (int i = lo; i < hi; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      reports[ui] = image_loss<T>(s.params, s.target, cfg, pos, data.patches[static_cast<std::size_t>(idx[ui])],
                                  batch->contexts[ui], batch->targets[ui], &chunk_grads[static_cast<std::size_t>(c)],
                                  scale);
    }
  });
  set_zero(s.grads);
  for (auto& g : chunk_grads) {
    zip_tensors(s.grads, g, [](const std::string&, Mat<T>& acc, const Mat<T>& part) { acc += part; });
  }

  LossReport& total = rep.loss;
  total.per_block.assign(reports.front().per_block.size(), 0.0);
  for (const LossReport& r : reports) {
    total.total += r.total / n;
    for (std::size_t b = 0; b < r.per_block.size(); ++b) total.per_block[b] += r.per_block[b] / n;
    total.n_predicted_patches += r.n_predicted_patches;
  }
  if (!std::isfinite(total.total)) throw NumericalFailure("loss", -1);

  adamw_step(s.params, s.grads, s.adam, rep.schedule.lr, rep.schedule.wd, cfg.optim.adamw);
  ema_update(s.target, s.params.encoder, rep.schedule.ema_m);
  s.step += 1;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoint mapping for the full training state.

template <class T>
Checkpoint to_checkpoint(const TrainState<T>& s) {
  Checkpoint ck;
  ck.config_text = s.config.serialize();
  ck.meta["step"] = std::to_string(s.step);
  ck.meta["optimizer_step"] = std::to_string(s.adam.step);
  ck.meta["seed"] = std::to_string(s.config.run.seed);
  // Mask, shuffle and init streams are derived from (seed, purpose, counter);
  // the step counter above is the only stream position there is.
  ck.meta["rng_streams"] = "derived:seed+step";
  put_params(ck, "", s.params);
  put_params(ck, "target_encoder/", s.target);
  put_params(ck, "optim/m/", s.adam.m);
  put_params(ck, "optim/v/", s.adam.v);
  return ck;
}

// Restores parameters, target encoder, optimizer moments and step.
template <class T>
TrainState<T> from_checkpoint(const Checkpoint& ck, const Config& cfg) {
  TrainState<T> s = init_state<T>(cfg);
  get_params(ck, "", s.params);
  get_params(ck, "target_encoder/", s.target);
  if (!ck.has_prefix("optim/")) {
    throw CheckpointError(CheckpointErrorKind::kMissing, "checkpoint has no optimizer state; cannot resume training");
  }
  get_params(ck, "optim/m/", s.adam.m);
  get_params(ck, "optim/v/", s.adam.v);
  try {
    s.step = std::stol(ck.meta.at("step"));
    s.adam.step = std::stol(ck.meta.at("optimizer_step"));
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointErrorKind::kFormat, "checkpoint lacks step metadata");
  }
  return s;
}

// Backbone-only checkpoint (target encoder + config), as consumed by the probe.
template <class T>
Checkpoint encoder_checkpoint(const Config& cfg, const EncoderParams<T>& target) {
  Checkpoint ck;
  ck.config_text = cfg.serialize();
  ck.meta["kind"] = "encoder";
  put_params(ck, "target_encoder/", target);
  return ck;
}

}  // namespace ijepa
