#include "pearnet/nodegen.hpp"

#include <cmath>
#include <limits>

namespace pearnet {

namespace op = ops;

SEBlock::SEBlock(int channels, int reduction, Rng& rng) {
  if (channels < 1 || reduction < 1) {
    throw InvalidArgument("SEBlock: channels and reduction must be >= 1");
  }
  const int hidden = std::max(1, channels / reduction);
  conv1_w_ = uniform_param({channels, channels, 1}, channels, rng);
  conv1_b_ = uniform_param({channels}, channels, rng);
  conv2_w_ = uniform_param({channels, channels, 1}, channels, rng);
  conv2_b_ = uniform_param({channels}, channels, rng);
  fc1_w_ = uniform_param({hidden, channels}, channels, rng);
  fc1_b_ = uniform_param({hidden}, channels, rng);
  fc2_w_ = uniform_param({channels, hidden}, hidden, rng);
  fc2_b_ = uniform_param({channels}, hidden, rng);
}

SEBlock::Result SEBlock::forward(const TensorPtr& phi) const {
  auto refined = op::conv1d(phi, conv1_w_, conv1_b_, 1, 1, op::Padding::kNone);
  refined = op::conv1d(refined, conv2_w_, conv2_b_, 1, 1, op::Padding::kNone);
  auto pooled = op::reshape(op::adaptive_avgpool1d(refined, 1), {refined->dim(0)});
  auto hidden = op::relu(linear_vec(fc1_w_, fc1_b_, pooled));
  auto gate = op::sigmoid(linear_vec(fc2_w_, fc2_b_, hidden));
  return {op::scale_channels(refined, gate), gate};
}

void SEBlock::collect_params(const std::string& prefix, std::vector<NamedParam>* out) {
  out->push_back({prefix + ".conv1.w", conv1_w_});
  out->push_back({prefix + ".conv1.b", conv1_b_});
  out->push_back({prefix + ".conv2.w", conv2_w_});
  out->push_back({prefix + ".conv2.b", conv2_b_});
  out->push_back({prefix + ".fc1.w", fc1_w_});
  out->push_back({prefix + ".fc1.b", fc1_b_});
  out->push_back({prefix + ".fc2.w", fc2_w_});
  out->push_back({prefix + ".fc2.b", fc2_b_});
}

SpatialConvStack::SpatialConvStack(const SpatialConvSpec& spec, int segment_len, Rng& rng)
    : spec_(spec), segment_len_(segment_len), se_(spec.channels_b, spec.se_reduction, rng) {
  if (spec.channels_a < 1 || spec.channels_b < 1) {
    throw InvalidArgument("SpatialConvStack: channel counts must be >= 1");
  }
  // Shape arithmetic fails here, not mid-forward.
  const int l1 = op::conv1d_out_len(segment_len, spec.kernel_a, spec.stride_a, 1, op::Padding::kNone);
  const int l2 = l1 / spec.pool_a;
  if (l2 < 1) {
    throw InvalidArgument("SpatialConvStack: segment too short for pool_a window");
  }
  op::conv1d_out_len(l2, spec.kernel_b, 1, 1, op::Padding::kSymmetric);
  const int l3 = l2 / spec.pool_b;
  if (l3 < 1) {
    throw InvalidArgument("SpatialConvStack: feature sequence too short for pool_b window");
  }
  feature_dim_ = spec.channels_b * l3;

  conv_a_w_ = uniform_param({spec.channels_a, 1, spec.kernel_a}, spec.kernel_a, rng);
  conv_a_b_ = uniform_param({spec.channels_a}, spec.kernel_a, rng);
  const int fan_b1 = spec.channels_a * spec.kernel_b;
  conv_b1_w_ = uniform_param({spec.channels_b, spec.channels_a, spec.kernel_b}, fan_b1, rng);
  conv_b1_b_ = uniform_param({spec.channels_b}, fan_b1, rng);
  const int fan_b2 = spec.channels_b * spec.kernel_b;
  conv_b2_w_ = uniform_param({spec.channels_b, spec.channels_b, spec.kernel_b}, fan_b2, rng);
  conv_b2_b_ = uniform_param({spec.channels_b}, fan_b2, rng);
}

TensorPtr SpatialConvStack::forward(const TensorPtr& segment) const {
  if (segment->rank() != 2 || segment->dim(0) != 1 || segment->dim(1) != segment_len_) {
    throw InvalidArgument("SpatialConvStack: segment must be [1, " + std::to_string(segment_len_) + "]");
  }
  auto x = op::conv1d(segment, conv_a_w_, conv_a_b_, spec_.stride_a, 1, op::Padding::kNone);
  x = op::maxpool1d(x, spec_.pool_a);
  x = op::conv1d(x, conv_b1_w_, conv_b1_b_, 1, 1, op::Padding::kSymmetric);
  x = op::conv1d(x, conv_b2_w_, conv_b2_b_, 1, 1, op::Padding::kSymmetric);
  auto phi = op::maxpool1d(x, spec_.pool_b);
  auto se = se_.forward(phi);
  auto out = op::relu(op::add(phi, se.enhanced));
  return op::reshape(out, {feature_dim_});
}

SEBlock::Result SpatialConvStack::se_forward(const TensorPtr& phi) const { return se_.forward(phi); }

void SpatialConvStack::collect_params(std::vector<NamedParam>* out) {
  out->push_back({"spatial.conv_a.w", conv_a_w_});
  out->push_back({"spatial.conv_a.b", conv_a_b_});
  out->push_back({"spatial.conv_b1.w", conv_b1_w_});
  out->push_back({"spatial.conv_b1.b", conv_b1_b_});
  out->push_back({"spatial.conv_b2.w", conv_b2_w_});
  out->push_back({"spatial.conv_b2.b", conv_b2_b_});
  se_.collect_params("spatial.se", out);
}

TemporalConvStack::TemporalConvStack(int feature_dim, int kernel, int l_max, double dropout_p,
                                     Rng& rng)
    : feature_dim_(feature_dim), kernel_(kernel), l_max_(l_max), dropout_p_(dropout_p) {
  if (feature_dim < 1) throw InvalidArgument("TemporalConvStack: feature_dim must be >= 1");
  if (kernel < 1) throw InvalidArgument("TemporalConvStack: kernel must be >= 1");
  if (l_max < 0) throw InvalidArgument("TemporalConvStack: l_max must be >= 0");
  const int fan = feature_dim * kernel;
  for (int level = 1; level <= l_max; ++level) {
    Level lv;
    lv.conv_w = uniform_param({feature_dim, feature_dim, kernel}, fan, rng);
    lv.conv_b = uniform_param({feature_dim}, fan, rng);
    lv.proj_w = uniform_param({feature_dim, feature_dim, 1}, feature_dim, rng);
    lv.proj_b = uniform_param({feature_dim}, feature_dim, rng);
    levels_.push_back(std::move(lv));
  }
}

TensorPtr TemporalConvStack::forward(const TensorPtr& level_input, int level, bool train,
                                     Rng& dropout_rng) const {
  if (level < 1 || level > l_max_) {
    throw InvalidArgument("TemporalConvStack: level " + std::to_string(level) +
                          " outside 1.." + std::to_string(l_max_));
  }
  if (level_input->rank() != 2 || level_input->dim(1) != feature_dim_) {
    throw InvalidArgument("TemporalConvStack: input must be [S, F]");
  }
  const Level& lv = levels_[static_cast<std::size_t>(level - 1)];
  // Feature channels convolved along the segment axis; left-only padding keeps
  // every level at S positions and past-facing.
  auto x = op::transpose(level_input);  // [F, S]
  auto y = op::conv1d(x, lv.conv_w, lv.conv_b, 1, dilation(level), op::Padding::kCausalLeft);
  y = op::relu(y);
  y = op::dropout(y, dropout_p_, train, dropout_rng);
  auto res = op::conv1d(x, lv.proj_w, lv.proj_b, 1, 1, op::Padding::kNone);
  return op::transpose(op::add(y, res));
}

void TemporalConvStack::collect_params(std::vector<NamedParam>* out) {
  for (int level = 1; level <= l_max_; ++level) {
    const std::string prefix = "temporal.l" + std::to_string(level);
    Level& lv = levels_[static_cast<std::size_t>(level - 1)];
    out->push_back({prefix + ".conv.w", lv.conv_w});
    out->push_back({prefix + ".conv.b", lv.conv_b});
    out->push_back({prefix + ".proj.w", lv.proj_w});
    out->push_back({prefix + ".proj.b", lv.proj_b});
  }
}

void TemporalConvStack::set_level_params(int level, const TensorPtr& conv_w, const TensorPtr& conv_b,
                                         const TensorPtr& proj_w, const TensorPtr& proj_b) {
  Level& lv = levels_.at(static_cast<std::size_t>(level - 1));
  lv.conv_w = conv_w;
  lv.conv_b = conv_b;
  lv.proj_w = proj_w;
  lv.proj_b = proj_b;
}

NodeSet generate_nodes(const Epoch& epoch, int s_count, int l_max,
                       const SpatialConvStack& spatial, const TemporalConvStack& temporal,
                       bool train, Rng& dropout_rng) {
  if (l_max < 0) throw InvalidArgument("generate_nodes: L_max must be >= 0");
  if (l_max > temporal.l_max()) {
    throw InvalidArgument("generate_nodes: L_max exceeds the temporal stack depth");
  }
  SegmentBatch batch = segment(epoch, s_count);
  if (batch.m_seg != spatial.segment_len()) {
    throw InvalidArgument("generate_nodes: segment length does not match the spatial stack");
  }

  std::vector<TensorPtr> level0_rows;
  level0_rows.reserve(static_cast<std::size_t>(s_count));
  for (int s = 0; s < s_count; ++s) {
    auto seg = tensor({1, batch.m_seg}, batch.segments[static_cast<std::size_t>(s)]);
    level0_rows.push_back(spatial.forward(seg));
  }
  auto level_grid = op::vstack(level0_rows);  // [S, F]

  std::vector<TensorPtr> all_levels = {level_grid};
  for (int level = 1; level <= l_max; ++level) {
    level_grid = temporal.forward(level_grid, level, train, dropout_rng);
    all_levels.push_back(level_grid);
  }

  NodeSet nodes;
  nodes.s_count = s_count;
  nodes.l_max = l_max;
  nodes.features = op::vstack(all_levels);
  for (int level = 0; level <= l_max; ++level) {
    for (int s = 0; s < s_count; ++s) nodes.provenance.push_back({level, s});
  }
  return nodes;
}

TensorPtr pearson_matrix(const TensorPtr& node_features, CorrMode mode) {
  if (node_features->rank() != 2) throw InvalidArgument("pearson_matrix: expects [n, F]");
  const int n = node_features->dim(0);
  const int f = node_features->dim(1);
  if (f < 2) throw InvalidArgument("pearson_matrix: feature length must be >= 2");

  if (mode == CorrMode::kStrict) {
    for (int i = 0; i < n; ++i) {
      double mu = 0.0;
      for (int j = 0; j < f; ++j) mu += node_features->at(i, j);
      mu /= f;
      double ss = 0.0;
      for (int j = 0; j < f; ++j) {
        const double d = node_features->at(i, j) - mu;
        ss += d * d;
      }
      if (std::sqrt(ss / f) <= kStdFloor) {
        throw DegenerateNodeError("pearson_matrix: node has (near-)zero standard deviation", i);
      }
    }
  }

  // P = Z Z^T with rows standardized to zero mean and unit sqrt(F)*sigma norm.
  auto mean = op::row_mean(node_features);
  auto centered = op::sub_colvec(node_features, mean);
  auto sd = op::row_std(node_features, mode == CorrMode::kTraining ? kStdFloor : 0.0);
  auto denom = op::mul_scalar(sd, std::sqrt(static_cast<double>(f)));
  auto z = op::div_colvec(centered, denom);
  return op::matmul(z, op::transpose(z));
}

TensorPtr vif(const TensorPtr& p, int i, CorrMode mode) {
  if (p->rank() != 2 || p->dim(0) != p->dim(1)) {
    throw InvalidArgument("vif: correlation matrix must be square");
  }
  if (p->dim(0) < 2) throw InvalidArgument("vif: need at least 2 nodes");
  auto det_p = op::determinant(p);
  if (mode == CorrMode::kStrict) {
    if (det_p->data[0] <= kDetFloor) {
      throw NearSingularError("vif: |P| <= " + std::to_string(kDetFloor) +
                              " (correlation matrix near-singular)");
    }
  } else {
    det_p = op::clamp(det_p, kDetFloor, std::numeric_limits<double>::infinity());
  }
  auto minor = op::determinant(op::drop_rowcol(p, i));
  auto ratio = op::div(minor, det_p);
  if (mode == CorrMode::kTraining) {
    ratio = op::clamp(ratio, -std::numeric_limits<double>::infinity(), kVifCeiling);
  }
  return ratio;
}

TensorPtr vif_loss(const TensorPtr& node_features, CorrMode mode) {
  auto p = pearson_matrix(node_features, mode);
  const int n = p->dim(0);
  std::vector<TensorPtr> vifs;
  vifs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) vifs.push_back(vif(p, i, mode));
  auto v = op::reshape(op::vstack(vifs), {n});
  auto delta = op::sigmoid(op::add_scalar(v, -1.0));   // sigmoid(v-1) == 1/(1+e^(-v+1))
  auto terms = op::smooth_l1(op::add_scalar(delta, -0.5));
  return op::mean_all(terms);
}

}  // namespace pearnet
