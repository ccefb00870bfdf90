#pragma once

#include <optional>
#include <vector>

#include "pearnet/metrics.hpp"
#include "pearnet/model.hpp"

namespace pearnet {

// Adaptive-moment optimizer with decoupled weight decay and (optionally) a
// running maximum of the second-moment estimate. Update per step t:
//   p   *= 1 - lr*wd                       (decay never enters the moments)
//   m    = b1*m + (1-b1)*g
//   v    = b2*v + (1-b2)*g^2
//   vmax = max(vmax, v)                    (when the maximum is enabled)
//   p   -= lr/(1-b1^t) * m / (sqrt(X)/sqrt(1-b2^t) + eps),  X = vmax or v
struct OptimizerConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  bool amsgrad = true;
};

class AdamW {
 public:
  AdamW(const OptimizerConfig& cfg, const std::vector<NamedParam>& params);
  void step();
  long steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<TensorPtr> params_;
  std::vector<std::vector<double>> m_, v_, vmax_;
  long t_ = 0;
};

// Training-protocol knobs plus the architecture axes the ablations vary.
struct TrainConfig {
  int epochs = 100;
  int batch_size = 120;
  double lr = 0.001;
  double dropout = 0.5;
  int k_folds = 20;
  OptimizerConfig optimizer;  // lr copied in where used
  std::uint64_t seed = 1;
  int segments = 5;
  int levels = 2;
  int heads = 3;
  AttentionMechanism attention = AttentionMechanism::kPearson;
  bool vif_loss_enabled = true;
  // Defaults to inverse class frequency of the training fold, normalized to
  // mean 1.
  std::optional<ClassWeights> class_weights;

  void validate() const;
};

// Copies the axes owned by TrainConfig onto an architecture template.
ModelConfig apply_train_overrides(ModelConfig base, const TrainConfig& tc);

ClassWeights inverse_frequency_weights(const Dataset& ds, const std::vector<std::size_t>& indices);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified k-fold: per-class seeded shuffle, then one global round-robin
// pass, so fold sizes differ by at most one overall and per class.
std::vector<FoldSplit> kfold_split(const std::vector<int>& labels, int k, std::uint64_t seed);

struct StepLoss {
  int fold = 0;   // set by run_cross_validation
  int epoch = 0;
  long step = 0;  // global step within the fold
  double vif = 0.0;
  double ce = 0.0;
  double total = 0.0;
};

struct FitResult {
  std::vector<StepLoss> trace;
  ClassWeights weights_used{};
};

// Seeded, deterministic optimization of one model on the given indices.
// Aborts with DivergenceError naming the step if the loss goes non-finite.
FitResult fit(PearNetModel& model, const Dataset& ds, const std::vector<std::size_t>& train_indices,
              const TrainConfig& cfg);

MetricsReport evaluate(const PearNetModel& model, const Dataset& ds,
                       const std::vector<std::size_t>& indices);

struct CvResult {
  std::vector<MetricsReport> fold_reports;
  MetricsReport pooled;  // metrics over confusion counts pooled across folds
  std::vector<StepLoss> trace;  // all folds, in order
  ClassWeights fold0_weights{};
};

// Full k-fold protocol. checkpoint_model, when given, receives the fold-0
// trained parameters (architecture must match apply_train_overrides(base,cfg)).
CvResult run_cross_validation(const ModelConfig& base, const TrainConfig& cfg, const Dataset& ds,
                              PearNetModel* checkpoint_model = nullptr);

}  // namespace pearnet
