#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pearnet/layers.hpp"
#include "pearnet/ops.hpp"

namespace pearnet {

enum class AttentionMechanism { kPearson, kCosine, kGatFeedForward };

AttentionMechanism attention_mechanism_from_string(const std::string& s);
std::string to_string(AttentionMechanism m);

enum class HeadMerge { kConcat, kAverage };

struct AttentionConfig {
  AttentionMechanism mechanism = AttentionMechanism::kPearson;
  int heads = 3;
  int head_dim = 16;  // F'
  HeadMerge merge = HeadMerge::kConcat;
  int adj_hidden = 16;
  double leaky_slope = 0.2;  // gat_ff only
};

// Shared two-layer residual transform applied to every coefficient:
// A_ij = ReLU(e_ij + w2 . ReLU(w1 * e_ij + b1) + b2). The last layer starts at
// zero so A == e at init and the coefficients alone pick the initial topology.
struct AdjacencyMlp {
  TensorPtr w1;  // [1, H]
  TensorPtr b1;  // [H]
  TensorPtr w2;  // [H, 1]
  TensorPtr b2;  // [1]

  static AdjacencyMlp init(int hidden, Rng& rng);
  // Full residual transform including the outer ReLU.
  TensorPtr apply(const TensorPtr& e) const;
};

// Learned graph structure: non-negative matrix plus the strict-positivity
// edge support.
struct Adjacency {
  TensorPtr a;  // [n, n], >= 0
  std::vector<std::pair<int, int>> edge_set;
};

// Raw coefficients e_ij for the transformed features W h. beta scales the
// pearson/cosine similarity; v_src/v_dst are the two halves of the gat_ff
// weight vector (unused otherwise, may be null).
TensorPtr attention_coefficients(const TensorPtr& h, const TensorPtr& w, const TensorPtr& beta,
                                 const TensorPtr& v_src, const TensorPtr& v_dst,
                                 AttentionMechanism mechanism, double leaky_slope = 0.2);

Adjacency learn_adjacency(const TensorPtr& e, const AdjacencyMlp& mlp);

// Softmax over N_i (plus an unconditional self-loop) per row; exact zeros off
// the neighborhood. Gradient flows through e only; the edge mask is recomputed
// each forward.
TensorPtr normalize_attention(const TensorPtr& e, const Adjacency& adj);

// h'_i = sum_{j in N_i u {i}} alpha_ij W h_j.
TensorPtr aggregate(const TensorPtr& alpha, const TensorPtr& w, const TensorPtr& h);

// Independent heads, each owning its projection, beta, gat vector and
// adjacency MLP; outputs merged by concat (default) or average.
class MultiHeadAttention {
 public:
  MultiHeadAttention(int in_dim, const AttentionConfig& cfg, Rng& rng);

  struct HeadOutput {
    TensorPtr e;
    Adjacency adj;
    TensorPtr alpha;
    TensorPtr h_out;  // [n, F']
  };
  struct Output {
    TensorPtr merged;  // [n, heads*F'] for concat, [n, F'] for average
    std::vector<HeadOutput> heads;
  };

  Output forward(const TensorPtr& h) const;

  int out_dim() const {
    return cfg_.merge == HeadMerge::kConcat ? cfg_.heads * cfg_.head_dim : cfg_.head_dim;
  }
  const AttentionConfig& config() const { return cfg_; }

  void collect_params(std::vector<NamedParam>* out);

 private:
  struct Head {
    TensorPtr w;     // [F', F]
    TensorPtr beta;  // [1]
    TensorPtr v_src, v_dst;  // [F'] each (gat_ff)
    AdjacencyMlp mlp;
  };
  AttentionConfig cfg_;
  std::vector<Head> heads_;
};

}  // namespace pearnet
