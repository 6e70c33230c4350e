#pragma once

#include "ijepa/backbone.hpp"
#include "ijepa/checkpoint.hpp"
#include "ijepa/config.hpp"
#include "ijepa/core.hpp"
#include "ijepa/dataset.hpp"
#include "ijepa/rng.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace ijepa {

// Frozen encoder as loaded for evaluation.
struct FrozenEncoder {
  Config config;
  EncoderParams<float> params;
};

// Reads the target encoder (and the model config it was trained with) from a
// training or backbone-only checkpoint; optimizer state is ignored.
inline FrozenEncoder load_frozen_encoder(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  FrozenEncoder fe;
  fe.config = parse_config_text(ck.config_text, path + " (embedded config)");
  Rng rng(0);
  fe.params = EncoderParams<float>::init(fe.config.model, rng);
  get_params(ck, "target_encoder/", fe.params);
  return fe;
}

// One row per image: mean over all patch outputs of the last layer, or the
// concatenation of those means for the last four layers.
template <class T>
Mat<double> extract_features(const EncoderParams<T>& params, const ViTConfig& cfg, const std::vector<Image>& images,
                             Representation rep) {
  const int layers = rep == Representation::kConcatLast4AvgPool ? 4 : 1;
  Mat<double> out(static_cast<Index>(images.size()), static_cast<Index>(layers) * cfg.width);
  if (images.empty()) return out;
  const PatchGrid grid = cfg.grid();
  const Mat<T> pos = positional_embedding<T>(grid, cfg.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    if (img.height != cfg.image_size || img.width != cfg.image_size || img.channels != cfg.channels) {
      throw ConfigError("image " + std::to_string(i) + " does not match the encoder's input size");
    }
    const Mat<T> patches = model_patches<T>(img, cfg);
    if (layers == 1) {
      std::vector<int> all(static_cast<std::size_t>(grid.n_patches()));
      for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
      const Mat<T> y = encode_visible<T>(params, cfg, patches, all, pos, nullptr, "target encoder");
      out.row(static_cast<Index>(i)) = y.colwise().mean().template cast<double>();
    } else {
      const auto outs = last_layer_outputs<T>(params, cfg, patches, pos, layers);
      for (int l = 0; l < layers; ++l) {
        out.row(static_cast<Index>(i)).segment(static_cast<Index>(l) * cfg.width, cfg.width) =
            outs[static_cast<std::size_t>(l)].colwise().mean().template cast<double>();
      }
    }
  }
  return out;
}

struct ProbeTrial {
  ProbeHead head = ProbeHead::kLinear;
  double lr = 0.0;
  double wd = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  bool diverged = false;
};

struct ProbeResult {
  double accuracy = 0.0;  // test accuracy of the configuration chosen on validation
  double val_accuracy = 0.0;
  ProbeHead head = ProbeHead::kLinear;
  double lr = 0.0;
  double wd = 0.0;
  int n_train = 0;
  int n_val = 0;
  int n_test = 0;
  int n_classes = 0;
  std::vector<ProbeTrial> trials;
};

struct ProbeSplit {
  std::vector<int> train, val, test;
};

inline ProbeSplit split_indices(int n, const ProbeConfig& cfg) {
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng::derive(cfg.seed, "probe-split");
  rng.shuffle(order);
  const int n_test = std::max(1, static_cast<int>(std::lround(cfg.test_fraction * n)));
  const int n_val = std::max(1, static_cast<int>(std::lround(cfg.val_fraction * n)));
  ProbeSplit s;
  s.test.assign(order.begin(), order.begin() + n_test);
  s.val.assign(order.begin() + n_test, order.begin() + n_test + n_val);
  s.train.assign(order.begin() + n_test + n_val, order.end());
  if (cfg.label_fraction < 1.0) {
    const auto keep = static_cast<std::size_t>(std::max(1.0, std::ceil(cfg.label_fraction * s.train.size())));
    s.train.resize(std::min(keep, s.train.size()));
  }
  return s;
}

namespace probe_detail {

inline double accuracy(const Mat<double>& x, const std::vector<int>& y, const Mat<double>& w,
                       const RowVec<double>& b) {
  if (x.rows() == 0) return 0.0;
  const Mat<double> logits = (x * w).rowwise() + b;
  int correct = 0;
  for (Index i = 0; i < x.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == y[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

// Full-batch gradient descent on softmax cross-entropy + (wd/2)||W||^2.
inline bool fit_softmax(const Mat<double>& x, const std::vector<int>& y, int classes, double lr, double wd, int epochs,
                        Mat<double>& w, RowVec<double>& b) {
  const Index n = x.rows();
  w = Mat<double>::Zero(x.cols(), classes);
  b = RowVec<double>::Zero(classes);
  Mat<double> onehot = Mat<double>::Zero(n, classes);
  for (Index i = 0; i < n; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
  for (int e = 0; e < epochs; ++e) {
    Mat<double> p = (x * w).rowwise() + b;
    for (Index i = 0; i < n; ++i) {
      p.row(i).array() -= p.row(i).maxCoeff();
      p.row(i) = p.row(i).array().exp();
      p.row(i) /= p.row(i).sum();
    }
    const Mat<double> d = (p - onehot) / static_cast<double>(n);
    w -= lr * (x.transpose() * d + wd * w);
    b -= lr * d.colwise().sum();
    if (!w.allFinite()) return false;
  }
  return true;
}

}  // namespace probe_detail

// Multinomial logistic regression on frozen features, grid-searched over
// head x lr x wd. Selection uses the validation split; the reported accuracy
// is on the held-out test split.
inline ProbeResult linear_probe(const Mat<double>& features, const std::vector<int>& labels, const ProbeConfig& cfg) {
  if (features.rows() != static_cast<Index>(labels.size())) throw DimensionError("feature/label count mismatch");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw ContractViolation("linear probe needs at least two classes");
  for (const auto& [cls, n] : counts) {
    if (n < 2) throw ContractViolation("class " + std::to_string(cls) + " has fewer than two samples");
  }
  std::map<int, int> class_id;
  for (const auto& [cls, n] : counts) class_id.emplace(cls, static_cast<int>(class_id.size()));
  std::vector<int> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) y[i] = class_id.at(labels[i]);
  const int classes = static_cast<int>(class_id.size());

  const ProbeSplit split = split_indices(static_cast<int>(labels.size()), cfg);
  const auto take = [&](const std::vector<int>& ids, Mat<double>& x, std::vector<int>& yy) {
    x.resize(static_cast<Index>(ids.size()), features.cols());
    yy.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      x.row(static_cast<Index>(i)) = features.row(ids[i]);
      yy[i] = y[static_cast<std::size_t>(ids[i])];
    }
  };
  Mat<double> xtr, xva, xte;
  std::vector<int> ytr, yva, yte;
  take(split.train, xtr, ytr);
  take(split.val, xva, yva);
  take(split.test, xte, yte);

  ProbeResult best;
  best.val_accuracy = -1.0;
  best.n_train = static_cast<int>(ytr.size());
  best.n_val = static_cast<int>(yva.size());
  best.n_test = static_cast<int>(yte.size());
  best.n_classes = classes;
  std::vector<ProbeTrial> trials;
  for (ProbeHead head : cfg.heads) {
    Mat<double> a = xtr, v = xva, t = xte;
    if (head == ProbeHead::kBatchNormLinear) {
      // Frozen batch-norm: standardize with training-split statistics.
      const RowVec<double> mean = xtr.colwise().mean();
      RowVec<double> sd = ((xtr.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
      for (Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 1e-8 ? sd(j) : 1.0;
      a = ((xtr.rowwise() - mean).array().rowwise() / sd.array()).matrix();
      v = ((xva.rowwise() - mean).array().rowwise() / sd.array()).matrix();
      t = ((xte.rowwise() - mean).array().rowwise() / sd.array()).matrix();
    }
    for (double lr : cfg.lr_grid) {
      for (double wd : cfg.wd_grid) {
        ProbeTrial trial{head, lr, wd, 0.0, 0.0, false};
        Mat<double> w;
        RowVec<double> b;
        if (!probe_detail::fit_softmax(a, ytr, classes, lr, wd, cfg.epochs, w, b)) {
          trial.diverged = true;
        } else {
          trial.val_accuracy = probe_detail::accuracy(v, yva, w, b);
          trial.test_accuracy = probe_detail::accuracy(t, yte, w, b);
        }
        trials.push_back(trial);
        if (!trial.diverged && trial.val_accuracy > best.val_accuracy) {
          best.val_accuracy = trial.val_accuracy;
          best.accuracy = trial.test_accuracy;
          best.head = head;
          best.lr = lr;
          best.wd = wd;
        }
      }
    }
  }
  best.trials = std::move(trials);
  if (best.val_accuracy < 0.0) throw NumericalFailure("linear probe (every configuration diverged)", -1);
  return best;
}

inline std::vector<int> probe_labels(const Dataset& ds, ProbeTask task) {
  if (!ds.labeled()) throw ConfigError("probe dataset has no labels");
  std::vector<int> y;
  y.reserve(ds.size());
  for (const Labels& l : ds.labels) y.push_back(task == ProbeTask::kShape ? l.shape : l.count);
  return y;
}

inline Dataset load_probe_data(const ProbeConfig& p, const ViTConfig& model) {
  if (!p.data_path.empty()) return load_dataset(p.data_path);
  SyntheticSpec spec;
  spec.n_images = p.n_images;
  spec.size = model.image_size;
  spec.seed = p.data_seed;
  return make_synthetic(spec);
}

struct RepresentationProbe {
  Representation representation = Representation::kLastLayerAvgPool;
  ProbeResult result;
};

// Probes every configured representation and keeps the best on validation.
template <class T>
RepresentationProbe probe_encoder(const EncoderParams<T>& params, const ViTConfig& model, const Dataset& ds,
                                  const ProbeConfig& cfg, std::vector<RepresentationProbe>* all = nullptr) {
  const std::vector<int> labels = probe_labels(ds, cfg.task);
  RepresentationProbe best;
  best.result.val_accuracy = -1.0;
  for (Representation rep : cfg.representations) {
    if (rep == Representation::kConcatLast4AvgPool && model.depth < 4) continue;
    RepresentationProbe r{rep, linear_probe(extract_features(params, model, ds.images, rep), labels, cfg)};
    if (all != nullptr) all->push_back(r);
    if (r.result.val_accuracy > best.result.val_accuracy) best = r;
  }
  if (best.result.val_accuracy < 0.0) throw ConfigError("no usable probe representation for this encoder depth");
  return best;
}

struct CollapseReport {
  std::vector<double> per_dim_std;
  double mean_std = 0.0;
  double mean_pairwise_cosine = 0.0;
  double effective_rank = 0.0;
};

// effective rank = exp(H(p)), p = singular values of the centered features / their sum.
inline CollapseReport collapse_report(const Mat<double>& f) {
  if (f.rows() < 2) throw ContractViolation("collapse report needs at least two samples");
  CollapseReport r;
  const RowVec<double> mean = f.colwise().mean();
  const Mat<double> centered = f.rowwise() - mean;
  const RowVec<double> sd = (centered.array().square().colwise().sum() / static_cast<double>(f.rows())).sqrt().matrix();
  r.per_dim_std.assign(sd.data(), sd.data() + sd.size());
  r.mean_std = sd.mean();

  Mat<double> unit = f;
  for (Index i = 0; i < unit.rows(); ++i) {
    const double nrm = unit.row(i).norm();
    if (nrm > 0.0) unit.row(i) /= nrm;
  }
  const RowVec<double> s = unit.colwise().sum();
  const double n = static_cast<double>(f.rows());
  const double self = unit.rowwise().squaredNorm().sum();
  r.mean_pairwise_cosine = (s.squaredNorm() - self) / (n * (n - 1.0));

  const Eigen::BDCSVD<Eigen::MatrixXd> svd(centered);
  const Eigen::VectorXd sv = svd.singularValues();
  const double total = sv.sum();
  if (!(total > 1e-12 * std::max(1.0, f.cwiseAbs().maxCoeff()))) {
    r.effective_rank = 1.0;
    return r;
  }
  double entropy = 0.0;
  for (Index i = 0; i < sv.size(); ++i) {
    const double p = sv(i) / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  r.effective_rank = std::exp(entropy);
  return r;
}

}  // namespace ijepa
