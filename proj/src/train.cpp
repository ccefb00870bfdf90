#include "pearnet/train.hpp"

#include <algorithm>
#include <cmath>

namespace pearnet {

AdamW::AdamW(const OptimizerConfig& cfg, const std::vector<NamedParam>& params) : cfg_(cfg) {
  if (cfg.lr < 0.0 || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0 ||
      cfg.eps <= 0.0 || cfg.weight_decay < 0.0) {
    throw InvalidArgument("AdamW: invalid optimizer hyperparameters");
  }
  for (const auto& p : params) {
    if (!p.value->requires_grad) {
      throw InvalidArgument("AdamW: parameter '" + p.name + "' does not require grad");
    }
    params_.push_back(p.value);
    m_.emplace_back(p.value->numel(), 0.0);
    v_.emplace_back(p.value->numel(), 0.0);
    vmax_.emplace_back(p.value->numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double step_size = cfg_.lr / bc1;
  const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = *params_[pi];
    auto& m = m_[pi];
    auto& v = v_[pi];
    auto& vmax = vmax_[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = p.grad[i];
      p.data[i] *= decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      double second = v[i];
      if (cfg_.amsgrad) {
        vmax[i] = std::max(vmax[i], v[i]);
        second = vmax[i];
      }
      const double denom = std::sqrt(second) / std::sqrt(bc2) + cfg_.eps;
      p.data[i] -= step_size * m[i] / denom;
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("train.epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("train.batch_size must be >= 1");
  if (lr < 0.0) throw InvalidArgument("train.lr must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("train.dropout must be in [0,1)");
  if (k_folds < 2) throw InvalidArgument("train.k_folds must be >= 2");
  if (segments < 1) throw InvalidArgument("train.segments must be >= 1");
  if (levels < 0) throw InvalidArgument("train.levels must be >= 0");
  if (heads < 1) throw InvalidArgument("train.heads must be >= 1");
  if (class_weights) {
    for (double w : *class_weights) {
      if (w < 0.0) throw InvalidArgument("train.class_weights must be non-negative");
    }
  }
}

ModelConfig apply_train_overrides(ModelConfig base, const TrainConfig& tc) {
  base.segments = tc.segments;
  base.levels = tc.levels;
  base.attention.heads = tc.heads;
  base.attention.mechanism = tc.attention;
  base.dropout = tc.dropout;
  base.vif_loss_enabled = tc.vif_loss_enabled;
  return base;
}

ClassWeights inverse_frequency_weights(const Dataset& ds, const std::vector<std::size_t>& indices) {
  std::array<long, kNumClasses> counts{};
  for (std::size_t idx : indices) {
    ++counts[static_cast<std::size_t>(ds.epochs[idx].label)];
  }
  ClassWeights raw{};
  const double total = static_cast<double>(indices.size());
  double sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    const double c = std::max<long>(counts[static_cast<std::size_t>(k)], 1);
    raw[static_cast<std::size_t>(k)] = total / (kNumClasses * c);
    sum += raw[static_cast<std::size_t>(k)];
  }
  // Normalize to mean 1 so the loss scale is independent of imbalance.
  for (double& w : raw) w *= kNumClasses / sum;
  return raw;
}

std::vector<FoldSplit> kfold_split(const std::vector<int>& labels, int k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k < 2) throw InvalidArgument("kfold_split: k must be >= 2");
  if (static_cast<std::size_t>(k) > n) {
    throw InvalidArgument("kfold_split: k exceeds the dataset size");
  }
  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= kNumClasses) throw InvalidArgument("kfold_split: label outside [0,4]");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  Rng rng(seed);
  std::vector<int> fold_of(n, 0);
  int cursor = 0;  // continues across classes so global sizes differ by <= 1
  for (auto& members : by_class) {
    rng.shuffle(members);
    for (std::size_t idx : members) {
      fold_of[idx] = cursor;
      cursor = (cursor + 1) % k;
    }
  }
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    for (int f = 0; f < k; ++f) {
      if (fold_of[i] == f) {
        folds[static_cast<std::size_t>(f)].test.push_back(i);
      } else {
        folds[static_cast<std::size_t>(f)].train.push_back(i);
      }
    }
  }
  return folds;
}

FitResult fit(PearNetModel& model, const Dataset& ds, const std::vector<std::size_t>& train_indices,
              const TrainConfig& cfg) {
  cfg.validate();
  if (train_indices.empty()) throw InvalidArgument("fit: empty training index set");

  FitResult result;
  result.weights_used = cfg.class_weights ? *cfg.class_weights
                                          : inverse_frequency_weights(ds, train_indices);

  OptimizerConfig ocfg = cfg.optimizer;
  ocfg.lr = cfg.lr;
  AdamW opt(ocfg, model.params());

  Rng shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
  Rng dropout_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 2);

  std::vector<std::size_t> order = train_indices;
  long global_step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Epoch> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(ds.epochs[order[i]]);

      ++global_step;
      Tape tape;
      LossBreakdown lb;
      {
        TapeScope scope(tape);
        lb = model.total_loss(batch, result.weights_used, true, dropout_rng);
      }
      if (!std::isfinite(lb.total_value())) {
        throw DivergenceError("fit: non-finite loss", global_step);
      }
      model.zero_grad();
      tape.backward(lb.total);
      opt.step();
      result.trace.push_back({0, epoch, global_step, lb.vif_value(), lb.ce_value(), lb.total_value()});
    }
  }
  return result;
}

MetricsReport evaluate(const PearNetModel& model, const Dataset& ds,
                       const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw InvalidArgument("evaluate: empty index set");
  Confusion confusion{};
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t end = std::min(indices.size(), start + kChunk);
    std::vector<Epoch> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) batch.push_back(ds.epochs[indices[i]]);
    auto probs = model.forward(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      int pred = 0;
      for (int k = 1; k < kNumClasses; ++k) {
        if (probs->at(static_cast<int>(i), k) > probs->at(static_cast<int>(i), pred)) pred = k;
      }
      ++confusion[static_cast<std::size_t>(batch[i].label)][static_cast<std::size_t>(pred)];
    }
  }
  return MetricsReport::from_confusion(confusion);
}

CvResult run_cross_validation(const ModelConfig& base, const TrainConfig& cfg, const Dataset& ds,
                              PearNetModel* checkpoint_model) {
  cfg.validate();
  const ModelConfig arch = apply_train_overrides(base, cfg);
  arch.validate();

  std::vector<int> labels;
  labels.reserve(ds.size());
  for (const Epoch& ep : ds.epochs) labels.push_back(ep.label);
  const auto folds = kfold_split(labels, cfg.k_folds, cfg.seed);

  CvResult result;
  Confusion pooled{};
  for (std::size_t f = 0; f < folds.size(); ++f) {
    PearNetModel model(arch, cfg.seed + 7919 * (f + 1));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + 104729 * (f + 1);
    FitResult fitres = fit(model, ds, folds[f].train, fold_cfg);
    for (StepLoss step : fitres.trace) {
      step.fold = static_cast<int>(f);
      result.trace.push_back(step);
    }
    MetricsReport rep = evaluate(model, ds, folds[f].test);
    for (int i = 0; i < kNumClasses; ++i) {
      for (int j = 0; j < kNumClasses; ++j) {
        pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
            rep.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
    }
    result.fold_reports.push_back(std::move(rep));
    if (f == 0) {
      result.fold0_weights = fitres.weights_used;
      if (checkpoint_model) {
        // Hand the fold-0 parameters to the caller's model instance.
        const auto& src = model.params();
        auto& dst = checkpoint_model->params();
        if (src.size() != dst.size()) {
          throw InvalidArgument("run_cross_validation: checkpoint model architecture mismatch");
        }
        for (std::size_t i = 0; i < src.size(); ++i) dst[i].value->data = src[i].value->data;
      }
    }
  }
  result.pooled = MetricsReport::from_confusion(pooled);
  return result;
}

}  // namespace pearnet
