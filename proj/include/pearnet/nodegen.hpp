#pragma once

#include <string>
#include <vector>

#include "pearnet/layers.hpp"
#include "pearnet/ops.hpp"
#include "pearnet/signal.hpp"

namespace pearnet {

// Spatial convolution stack geometry. The node feature length F is computed
// from this arithmetic at construction time (channels_b x length after the
// final max-pool), so it adapts to the segment length.
struct SpatialConvSpec {
  int channels_a = 32;
  int kernel_a = 50;
  int stride_a = 6;
  int pool_a = 8;
  int channels_b = 64;
  int kernel_b = 8;  // both mid convs, symmetric padding
  int pool_b = 4;
  int se_reduction = 4;
};

// Channel-gating block: two 1x1 convs refine the feature map, an adaptive
// average pool squeezes it to one descriptor per channel, and two dense layers
// with a sigmoid produce the gate multiplied back onto the refined map.
class SEBlock {
 public:
  SEBlock(int channels, int reduction, Rng& rng);

  struct Result {
    TensorPtr enhanced;  // refined map scaled by the gate
    TensorPtr gate;      // [C], every entry in (0,1)
  };
  Result forward(const TensorPtr& phi) const;

  void collect_params(const std::string& prefix, std::vector<NamedParam>* out);

 private:
  TensorPtr conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  TensorPtr fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// conv -> maxpool -> conv -> conv -> maxpool -> residual SE -> ReLU, flattened
// to a fixed-length feature vector per segment.
class SpatialConvStack {
 public:
  SpatialConvStack(const SpatialConvSpec& spec, int segment_len, Rng& rng);

  int feature_dim() const { return feature_dim_; }
  int segment_len() const { return segment_len_; }

  // segment [1, M] -> [F]
  TensorPtr forward(const TensorPtr& segment) const;
  // Exposes the gate for property tests.
  SEBlock::Result se_forward(const TensorPtr& phi) const;

  void collect_params(std::vector<NamedParam>* out);

 private:
  SpatialConvSpec spec_;
  int segment_len_;
  int feature_dim_;
  TensorPtr conv_a_w_, conv_a_b_, conv_b1_w_, conv_b1_b_, conv_b2_w_, conv_b2_b_;
  SEBlock se_;
};

// Per-level dilated causal convolution over the segment axis with an
// exponentially growing dilation d = 2^(level-1). Each level consumes the
// previous level's node grid and preserves its length via left-only zero
// padding; the block is conv -> ReLU -> dropout, plus a 1x1 residual
// projection of the input.
class TemporalConvStack {
 public:
  TemporalConvStack(int feature_dim, int kernel, int l_max, double dropout_p, Rng& rng);

  int l_max() const { return l_max_; }
  int dilation(int level) const { return 1 << (level - 1); }

  // level_input [S, F] -> [S, F]; level in 1..l_max.
  TensorPtr forward(const TensorPtr& level_input, int level, bool train, Rng& dropout_rng) const;

  void collect_params(std::vector<NamedParam>* out);

  // Test hook: overwrite one level's filters.
  void set_level_params(int level, const TensorPtr& conv_w, const TensorPtr& conv_b,
                        const TensorPtr& proj_w, const TensorPtr& proj_b);

 private:
  int feature_dim_;
  int kernel_;
  int l_max_;
  double dropout_p_;
  struct Level {
    TensorPtr conv_w, conv_b;  // [F,F,k], [F]
    TensorPtr proj_w, proj_b;  // [F,F,1], [F]
  };
  std::vector<Level> levels_;
};

struct NodeProvenance {
  int level = 0;
  int segment = 0;
};

// Graph nodes: level-0 spatial features united with every temporal level.
// node_count == S_count * (L_max + 1), rows ordered level-major.
struct NodeSet {
  TensorPtr features;  // [node_count, F]
  std::vector<NodeProvenance> provenance;
  int s_count = 0;
  int l_max = 0;
  int node_count() const { return features ? features->dim(0) : 0; }
};

NodeSet generate_nodes(const Epoch& epoch, int s_count, int l_max,
                       const SpatialConvStack& spatial, const TemporalConvStack& temporal,
                       bool train, Rng& dropout_rng);

// Degenerate-node / near-singular handling: strict mode raises, training mode
// floors the std at 1e-8, clamps |P| at 1e-12 and VIF at 1e6.
enum class CorrMode { kStrict, kTraining };

inline constexpr double kStdFloor = 1e-8;
inline constexpr double kDetFloor = 1e-12;
inline constexpr double kVifCeiling = 1e6;

// Pearson correlation matrix of node features over the feature axis:
// P_ij = Cov(v_i, v_j) / (sigma_i sigma_j). Symmetric, unit diagonal.
TensorPtr pearson_matrix(const TensorPtr& node_features, CorrMode mode);

// VIF_i = M_ii / |P| with M_ii the principal minor at i.
TensorPtr vif(const TensorPtr& p, int i, CorrMode mode);

// L_vif = mean_i smoothL1(delta(VIF_i) - 0.5), delta(v) = sigmoid(v - 1).
// Differentiable end-to-end through the determinants.
TensorPtr vif_loss(const TensorPtr& node_features, CorrMode mode);

}  // namespace pearnet
