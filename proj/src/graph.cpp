#include "pearnet/graph.hpp"

#include <cmath>

#include "pearnet/nodegen.hpp"

namespace pearnet {

namespace op = ops;

AttentionMechanism attention_mechanism_from_string(const std::string& s) {
  if (s == "pearson") return AttentionMechanism::kPearson;
  if (s == "cosine") return AttentionMechanism::kCosine;
  if (s == "gat_ff") return AttentionMechanism::kGatFeedForward;
  throw InvalidArgument("unknown attention mechanism: '" + s +
                        "' (expected pearson|cosine|gat_ff)");
}

std::string to_string(AttentionMechanism m) {
  switch (m) {
    case AttentionMechanism::kPearson: return "pearson";
    case AttentionMechanism::kCosine: return "cosine";
    case AttentionMechanism::kGatFeedForward: return "gat_ff";
  }
  return "?";
}

AdjacencyMlp AdjacencyMlp::init(int hidden, Rng& rng) {
  if (hidden < 1) throw InvalidArgument("AdjacencyMlp: hidden width must be >= 1");
  AdjacencyMlp mlp;
  mlp.w1 = uniform_param({1, hidden}, 1, rng);
  mlp.b1 = zeros({hidden}, true);
  mlp.w2 = zeros({hidden, 1}, true);
  mlp.b2 = zeros({1}, true);
  return mlp;
}

TensorPtr AdjacencyMlp::apply(const TensorPtr& e) const {
  const int n = e->dim(0), m = e->dim(1);
  auto col = op::reshape(e, {n * m, 1});
  auto hidden = op::relu(op::add_rowvec(op::matmul(col, w1), b1));
  auto res = op::add_rowvec(op::matmul(hidden, w2), b2);
  return op::relu(op::add(e, op::reshape(res, {n, m})));
}

namespace {

// Row-standardized features: (x - mean) / (sqrt(d) * max(std, floor)), so the
// Gram matrix is the Pearson correlation matrix.
TensorPtr standardize_rows(const TensorPtr& x) {
  auto mean = op::row_mean(x);
  auto centered = op::sub_colvec(x, mean);
  auto sd = op::row_std(x, kStdFloor);
  auto denom = op::mul_scalar(sd, std::sqrt(static_cast<double>(x->dim(1))));
  return op::div_colvec(centered, denom);
}

}  // namespace

TensorPtr attention_coefficients(const TensorPtr& h, const TensorPtr& w, const TensorPtr& beta,
                                 const TensorPtr& v_src, const TensorPtr& v_dst,
                                 AttentionMechanism mechanism, double leaky_slope) {
  if (h->rank() != 2 || w->rank() != 2 || h->dim(1) != w->dim(1)) {
    throw InvalidArgument("attention_coefficients: h must be [n,F] and w [F',F]");
  }
  auto wh = op::matmul(h, op::transpose(w));  // [n, F']
  switch (mechanism) {
    case AttentionMechanism::kPearson: {
      auto z = standardize_rows(wh);
      // Clamp: self-correlations can exceed 1 by an ulp.
      auto corr = op::clamp(op::matmul(z, op::transpose(z)), -1.0, 1.0);
      return op::scale_by_scalar(op::abs(corr), beta);
    }
    case AttentionMechanism::kCosine: {
      auto z = op::div_colvec(wh, op::row_norm(wh, kStdFloor));
      auto cos = op::clamp(op::matmul(z, op::transpose(z)), -1.0, 1.0);
      return op::scale_by_scalar(cos, beta);
    }
    case AttentionMechanism::kGatFeedForward: {
      if (!v_src || !v_dst) {
        throw InvalidArgument("attention_coefficients: gat_ff needs v_src/v_dst");
      }
      const int fp = wh->dim(1);
      auto u = op::reshape(op::matmul(wh, op::reshape(v_src, {fp, 1})), {wh->dim(0)});
      auto t = op::reshape(op::matmul(wh, op::reshape(v_dst, {fp, 1})), {wh->dim(0)});
      return op::leaky_relu(op::outer_add(u, t), leaky_slope);
    }
  }
  throw InvalidArgument("attention_coefficients: bad mechanism");
}

Adjacency learn_adjacency(const TensorPtr& e, const AdjacencyMlp& mlp) {
  if (e->rank() != 2 || e->dim(0) != e->dim(1)) {
    throw InvalidArgument("learn_adjacency: e must be square");
  }
  Adjacency adj;
  adj.a = mlp.apply(e);
  const int n = e->dim(0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (adj.a->at(i, j) > 0.0) adj.edge_set.emplace_back(i, j);
    }
  }
  return adj;
}

TensorPtr normalize_attention(const TensorPtr& e, const Adjacency& adj) {
  const int n = e->dim(0);
  if (adj.a->dim(0) != n || adj.a->dim(1) != n) {
    throw InvalidArgument("normalize_attention: adjacency size mismatch");
  }
  std::vector<unsigned char> mask(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    mask[static_cast<std::size_t>(i) * n + i] = 1;  // central node itself, always
    for (int j = 0; j < n; ++j) {
      if (adj.a->at(i, j) > 0.0) mask[static_cast<std::size_t>(i) * n + j] = 1;
    }
  }
  return op::masked_softmax_rows(e, mask);
}

TensorPtr aggregate(const TensorPtr& alpha, const TensorPtr& w, const TensorPtr& h) {
  return op::matmul(alpha, op::matmul(h, op::transpose(w)));
}

MultiHeadAttention::MultiHeadAttention(int in_dim, const AttentionConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.heads < 1) throw InvalidArgument("MultiHeadAttention: heads must be >= 1");
  if (cfg.head_dim < 1) throw InvalidArgument("MultiHeadAttention: head_dim must be >= 1");
  if (cfg.mechanism == AttentionMechanism::kPearson && cfg.head_dim < 2) {
    throw InvalidArgument("MultiHeadAttention: pearson attention needs head_dim >= 2");
  }
  for (int i = 0; i < cfg.heads; ++i) {
    Head head;
    head.w = uniform_param({cfg.head_dim, in_dim}, in_dim, rng);
    head.beta = tensor({1}, {1.0}, true);
    head.v_src = uniform_param({cfg.head_dim}, cfg.head_dim, rng);
    head.v_dst = uniform_param({cfg.head_dim}, cfg.head_dim, rng);
    head.mlp = AdjacencyMlp::init(cfg.adj_hidden, rng);
    heads_.push_back(std::move(head));
  }
}

MultiHeadAttention::Output MultiHeadAttention::forward(const TensorPtr& h) const {
  Output out;
  std::vector<TensorPtr> merged_parts;
  for (const Head& head : heads_) {
    HeadOutput ho;
    ho.e = attention_coefficients(h, head.w, head.beta, head.v_src, head.v_dst, cfg_.mechanism,
                                  cfg_.leaky_slope);
    ho.adj = learn_adjacency(ho.e, head.mlp);
    ho.alpha = normalize_attention(ho.e, ho.adj);
    ho.h_out = op::matmul(ho.alpha, op::matmul(h, op::transpose(head.w)));
    merged_parts.push_back(ho.h_out);
    out.heads.push_back(std::move(ho));
  }
  if (cfg_.merge == HeadMerge::kConcat) {
    if (merged_parts.size() == 1) {
      out.merged = merged_parts[0];
    } else {
      // Column concat via stacked transposes.
      std::vector<TensorPtr> t;
      t.reserve(merged_parts.size());
      for (const auto& p : merged_parts) t.push_back(op::transpose(p));
      out.merged = op::transpose(op::vstack(t));
    }
  } else {
    TensorPtr acc = merged_parts[0];
    for (std::size_t i = 1; i < merged_parts.size(); ++i) acc = op::add(acc, merged_parts[i]);
    out.merged = op::mul_scalar(acc, 1.0 / static_cast<double>(merged_parts.size()));
  }
  return out;
}

void MultiHeadAttention::collect_params(std::vector<NamedParam>* out) {
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const std::string prefix = "graph.head" + std::to_string(i);
    Head& head = heads_[i];
    out->push_back({prefix + ".w", head.w});
    out->push_back({prefix + ".beta", head.beta});
    if (cfg_.mechanism == AttentionMechanism::kGatFeedForward) {
      out->push_back({prefix + ".v_src", head.v_src});
      out->push_back({prefix + ".v_dst", head.v_dst});
    }
    out->push_back({prefix + ".adj.w1", head.mlp.w1});
    out->push_back({prefix + ".adj.b1", head.mlp.b1});
    out->push_back({prefix + ".adj.w2", head.mlp.w2});
    out->push_back({prefix + ".adj.b2", head.mlp.b2});
  }
}

}  // namespace pearnet
