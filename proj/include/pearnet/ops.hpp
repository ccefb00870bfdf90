#pragma once

#include "pearnet/rng.hpp"
#include "pearnet/tape.hpp"
#include "pearnet/tensor.hpp"

// Differentiable primitives. Every op computes its forward result eagerly and,
// when a tape is active, records a backward closure. All math is float64;
// results are deterministic for fixed inputs and RNG state.
namespace pearnet::ops {

enum class Padding { kNone, kCausalLeft, kSymmetric };

// Elementwise (same shape unless noted).
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);  // pointwise product
TensorPtr div(const TensorPtr& a, const TensorPtr& b);
TensorPtr add_scalar(const TensorPtr& a, double c);
TensorPtr mul_scalar(const TensorPtr& a, double c);
TensorPtr relu(const TensorPtr& a);
TensorPtr leaky_relu(const TensorPtr& a, double slope);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr abs(const TensorPtr& a);
TensorPtr clamp(const TensorPtr& a, double lo, double hi);  // zero grad when clipped
TensorPtr log_clamped(const TensorPtr& a, double floor);    // ln(max(x, floor))
// 0.5*x^2 inside |x| < 1, |x| - 0.5 outside (transition point 1).
TensorPtr smooth_l1(const TensorPtr& a);

// Linear algebra.
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);  // [m,k]x[k,n]
TensorPtr transpose(const TensorPtr& a);                   // [m,n] -> [n,m]
TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& b);  // x[m,n] + b[n] per row
TensorPtr sub_colvec(const TensorPtr& x, const TensorPtr& v);  // x[m,n] - v[m] per col
TensorPtr div_colvec(const TensorPtr& x, const TensorPtr& v);  // x[m,n] / v[m] per col
TensorPtr outer_add(const TensorPtr& u, const TensorPtr& w);   // out[i,j] = u[i]+w[j]
TensorPtr scale_by_scalar(const TensorPtr& x, const TensorPtr& s);  // x * s, s a [1] tensor
// Determinant via LU with partial pivoting; backward uses |P| * P^-T (zero
// gradient when |P| underflows to ~0, consistent with the training clamp).
TensorPtr determinant(const TensorPtr& a);
// [n,n] -> [n-1,n-1] with row i and column i removed.
TensorPtr drop_rowcol(const TensorPtr& a, int i);

// Shape.
TensorPtr reshape(const TensorPtr& a, std::vector<int> shape);
// Stacks 1-D tensors as rows, or concatenates 2-D tensors vertically.
TensorPtr vstack(const std::vector<TensorPtr>& parts);

// Reductions.
TensorPtr sum_all(const TensorPtr& a);   // -> [1]
TensorPtr mean_all(const TensorPtr& a);  // -> [1]
TensorPtr row_sum(const TensorPtr& x);   // [m,n] -> [m]
TensorPtr row_mean(const TensorPtr& x);  // [m,n] -> [m]
// Population std per row with a floor: max(sqrt(mean((x - mean)^2)), floor).
// Floored rows get zero gradient.
TensorPtr row_std(const TensorPtr& x, double floor);
// Euclidean norm per row with a floor.
TensorPtr row_norm(const TensorPtr& x, double floor);

// Softmax over `axis` of a 1-D or 2-D tensor.
TensorPtr softmax(const TensorPtr& a, int axis);
// Row softmax over mask support; exact zeros elsewhere. Mask rows must be
// non-empty. The mask itself is not differentiated through.
TensorPtr masked_softmax_rows(const TensorPtr& e, const std::vector<unsigned char>& mask);

// Neural-net pieces.
// x[C_in,L] * w[C_out,C_in,k] (+ optional b[C_out]); out[co][h] =
// sum_{ci,i} w[co][ci][i] * x[ci][s*h + (k-1)*d - i*d - pad_left], matching
// the past-facing orientation of the dilated causal form.
TensorPtr conv1d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b, int stride,
                 int dilation, Padding pad);
TensorPtr maxpool1d(const TensorPtr& x, int window);             // stride == window
TensorPtr adaptive_avgpool1d(const TensorPtr& x, int target_len);
TensorPtr scale_channels(const TensorPtr& x, const TensorPtr& g);  // x[C,L] * g[C]
// Inverted scaling: train -> x * mask / (1-p); eval -> exact identity.
TensorPtr dropout(const TensorPtr& x, double p, bool train, Rng& rng);

// Conv output length for the given geometry; throws InvalidArgument when the
// result would be empty or the geometry is inconsistent.
int conv1d_out_len(int in_len, int k, int stride, int dilation, Padding pad);

}  // namespace pearnet::ops
