#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "pearnet/graph.hpp"
#include "pearnet/nodegen.hpp"
#include "pearnet/signal.hpp"

namespace pearnet {

// Architecture snapshot. Serialized into checkpoints; loading validates it
// against the receiving model.
struct ModelConfig {
  int epoch_len = kDefaultEpochLen;
  int segments = 5;
  int levels = 2;
  SpatialConvSpec spatial;
  int temporal_kernel = 2;
  AttentionConfig attention;
  std::string readout = "flatten";  // flatten | mean_pool
  int classifier_hidden = 128;
  double dropout = 0.5;
  bool vif_loss_enabled = true;

  int segment_len() const { return segments > 0 ? epoch_len / segments : 0; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig& other) const { return to_json() == other.to_json(); }
};

struct LossBreakdown {
  TensorPtr vif;    // scalar
  TensorPtr ce;     // scalar
  TensorPtr total;  // vif + ce exactly

  double vif_value() const { return vif->data[0]; }
  double ce_value() const { return ce->data[0]; }
  double total_value() const { return total->data[0]; }
};

using ClassWeights = std::array<double, kNumClasses>;

// -(1/M) sum_k sum_i w_k y_i^k log(p_i^k) with one-hot y and log clamped at
// 1e-12. pred is [batch, 5] of row distributions.
TensorPtr weighted_cross_entropy(const TensorPtr& pred, const std::vector<int>& labels,
                                 const ClassWeights& weights);

// Segmentation -> node generation -> graph attention -> two dense layers with
// softmax, plus the composite loss.
class PearNetModel {
 public:
  PearNetModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int node_count() const { return cfg_.segments * (cfg_.levels + 1); }
  int feature_dim() const { return spatial_.feature_dim(); }

  // Rows are probability distributions over the 5 stages. Pure function in
  // eval mode (no dropout, no rng draws, no state mutation).
  TensorPtr forward(const std::vector<Epoch>& batch, bool train, Rng& dropout_rng) const;
  TensorPtr forward(const std::vector<Epoch>& batch) const;  // eval

  // Both loss components on one forward pass; the VIF term is averaged over
  // the epochs of the batch (zero tensor when disabled by config).
  LossBreakdown total_loss(const std::vector<Epoch>& batch, const ClassWeights& weights,
                           bool train, Rng& dropout_rng) const;

  // Per-head attention state for one epoch, for graph dumps.
  struct Inspection {
    NodeSet nodes;
    MultiHeadAttention::Output graph;
    TensorPtr probs;  // [5]
  };
  Inspection inspect(const Epoch& epoch) const;

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  void zero_grad();

 private:
  TensorPtr forward_one(const Epoch& epoch, bool train, Rng& dropout_rng,
                        NodeSet* nodes_out, MultiHeadAttention::Output* graph_out) const;

  ModelConfig cfg_;
  Rng init_rng_;  // consumed during construction only
  SpatialConvStack spatial_;
  TemporalConvStack temporal_;
  MultiHeadAttention attention_;
  TensorPtr fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  std::vector<NamedParam> params_;
};

// Versioned binary checkpoint: magic PNCK, config snapshot as embedded JSON,
// then named parameter tensors (little-endian float64). Loading into an
// existing model rejects config or parameter-name mismatches.
void save_checkpoint(const PearNetModel& model, const std::string& path);
void load_checkpoint_into(PearNetModel& model, const std::string& path);
// Reads the embedded config (for tools that rebuild the model from the file).
ModelConfig read_checkpoint_config(const std::string& path);
PearNetModel load_checkpoint(const std::string& path, std::uint64_t seed = 0);

}  // namespace pearnet
