#include "pearnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace pearnet::ops {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  require(a->shape == b->shape, std::string(op) + ": shape mismatch");
}

// In-place LU with partial pivoting; returns the determinant. `m` is n*n
// row-major and is overwritten with the LU factors; `piv` records row swaps.
double lu_decompose(std::vector<double>& m, int n, std::vector<int>& piv) {
  piv.resize(static_cast<std::size_t>(n));
  double det = 1.0;
  for (int c = 0; c < n; ++c) {
    int p = c;
    double best = std::fabs(m[static_cast<std::size_t>(c) * n + c]);
    for (int r = c + 1; r < n; ++r) {
      const double v = std::fabs(m[static_cast<std::size_t>(r) * n + c]);
      if (v > best) {
        best = v;
        p = r;
      }
    }
    piv[static_cast<std::size_t>(c)] = p;
    if (best == 0.0) return 0.0;
    if (p != c) {
      for (int j = 0; j < n; ++j) {
        std::swap(m[static_cast<std::size_t>(c) * n + j], m[static_cast<std::size_t>(p) * n + j]);
      }
      det = -det;
    }
    const double pivot = m[static_cast<std::size_t>(c) * n + c];
    det *= pivot;
    for (int r = c + 1; r < n; ++r) {
      const double f = m[static_cast<std::size_t>(r) * n + c] / pivot;
      m[static_cast<std::size_t>(r) * n + c] = f;
      for (int j = c + 1; j < n; ++j) {
        m[static_cast<std::size_t>(r) * n + j] -= f * m[static_cast<std::size_t>(c) * n + j];
      }
    }
  }
  return det;
}

// Solves LU * x = b in place using factors from lu_decompose.
void lu_solve(const std::vector<double>& lu, const std::vector<int>& piv, int n,
              std::vector<double>& b) {
  for (int c = 0; c < n; ++c) {
    if (piv[static_cast<std::size_t>(c)] != c) {
      std::swap(b[static_cast<std::size_t>(c)], b[static_cast<std::size_t>(piv[static_cast<std::size_t>(c)])]);
    }
    for (int r = c + 1; r < n; ++r) {
      b[static_cast<std::size_t>(r)] -= lu[static_cast<std::size_t>(r) * n + c] * b[static_cast<std::size_t>(c)];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    for (int c = r + 1; c < n; ++c) {
      b[static_cast<std::size_t>(r)] -= lu[static_cast<std::size_t>(r) * n + c] * b[static_cast<std::size_t>(c)];
    }
    b[static_cast<std::size_t>(r)] /= lu[static_cast<std::size_t>(r) * n + r];
  }
}

struct ConvGeometry {
  int pad_left = 0;
  int pad_right = 0;
  int out_len = 0;
  int span = 0;  // (k-1)*dilation
};

ConvGeometry conv_geometry(int in_len, int k, int stride, int dilation, Padding pad) {
  require(k >= 1, "conv1d: kernel size must be >= 1");
  require(stride >= 1, "conv1d: stride must be >= 1");
  require(dilation >= 1, "conv1d: dilation must be >= 1");
  ConvGeometry g;
  g.span = (k - 1) * dilation;
  switch (pad) {
    case Padding::kNone:
      break;
    case Padding::kCausalLeft:
      require(stride == 1, "conv1d: causal-left padding requires stride 1");
      g.pad_left = g.span;
      break;
    case Padding::kSymmetric:
      g.pad_left = g.span / 2;
      g.pad_right = g.span - g.pad_left;
      break;
  }
  const int numer = in_len + g.pad_left + g.pad_right - g.span - 1;
  require(numer >= 0, "conv1d: output length would be <= 0");
  g.out_len = numer / stride + 1;
  return g;
}

}  // namespace

int conv1d_out_len(int in_len, int k, int stride, int dilation, Padding pad) {
  return conv_geometry(in_len, k, stride, dilation, pad).out_len;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "add");
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (Tape* t = Tape::active()) {
    t->record([a, b, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      auto& gb = adj.of(b);
      for (std::size_t i = 0; i < g->size(); ++i) {
        ga[i] += (*g)[i];
        gb[i] += (*g)[i];
      }
    });
  }
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "sub");
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
  if (Tape* t = Tape::active()) {
    t->record([a, b, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      auto& gb = adj.of(b);
      for (std::size_t i = 0; i < g->size(); ++i) {
        ga[i] += (*g)[i];
        gb[i] -= (*g)[i];
      }
    });
  }
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "mul");
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (Tape* t = Tape::active()) {
    t->record([a, b, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      auto& gb = adj.of(b);
      for (std::size_t i = 0; i < g->size(); ++i) {
        ga[i] += (*g)[i] * b->data[i];
        gb[i] += (*g)[i] * a->data[i];
      }
    });
  }
  return out;
}

TensorPtr div(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "div");
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] / b->data[i];
  if (Tape* t = Tape::active()) {
    t->record([a, b, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      auto& gb = adj.of(b);
      for (std::size_t i = 0; i < g->size(); ++i) {
        ga[i] += (*g)[i] / b->data[i];
        gb[i] -= (*g)[i] * a->data[i] / (b->data[i] * b->data[i]);
      }
    });
  }
  return out;
}

TensorPtr add_scalar(const TensorPtr& a, double c) {
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + c;
  if (Tape* t = Tape::active()) {
    t->record([a, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    });
  }
  return out;
}

TensorPtr mul_scalar(const TensorPtr& a, double c) {
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * c;
  if (Tape* t = Tape::active()) {
    t->record([a, out, c](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * c;
    });
  }
  return out;
}

TensorPtr relu(const TensorPtr& a) {
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
  if (Tape* t = Tape::active()) {
    t->record([a, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (a->data[i] > 0.0) ga[i] += (*g)[i];
      }
    });
  }
  return out;
}

TensorPtr leaky_relu(const TensorPtr& a, double slope) {
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) {
    out->data[i] = a->data[i] > 0.0 ? a->data[i] : slope * a->data[i];
  }
  if (Tape* t = Tape::active()) {
    t->record([a, out, slope](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) {
        ga[i] += (*g)[i] * (a->data[i] > 0.0 ? 1.0 : slope);
      }
    });
  }
  return out;
}

TensorPtr sigmoid(const TensorPtr& a) {
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = 1.0 / (1.0 + std::exp(-a->data[i]));
  if (Tape* t = Tape::active()) {
    t->record([a, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double y = out->data[i];
        ga[i] += (*g)[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

TensorPtr abs(const TensorPtr& a) {
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = std::fabs(a->data[i]);
  if (Tape* t = Tape::active()) {
    t->record([a, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double x = a->data[i];
        ga[i] += (*g)[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
      }
    });
  }
  return out;
}

TensorPtr clamp(const TensorPtr& a, double lo, double hi) {
  require(lo <= hi, "clamp: lo must be <= hi");
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = std::min(std::max(a->data[i], lo), hi);
  if (Tape* t = Tape::active()) {
    t->record([a, out, lo, hi](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (a->data[i] > lo && a->data[i] < hi) ga[i] += (*g)[i];
      }
    });
  }
  return out;
}

TensorPtr log_clamped(const TensorPtr& a, double floor) {
  require(floor > 0.0, "log_clamped: floor must be positive");
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = std::log(std::max(a->data[i], floor));
  if (Tape* t = Tape::active()) {
    t->record([a, out, floor](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (a->data[i] > floor) ga[i] += (*g)[i] / a->data[i];
      }
    });
  }
  return out;
}

TensorPtr smooth_l1(const TensorPtr& a) {
  auto out = zeros(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) {
    const double x = a->data[i];
    out->data[i] = std::fabs(x) < 1.0 ? 0.5 * x * x : std::fabs(x) - 0.5;
  }
  if (Tape* t = Tape::active()) {
    t->record([a, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double x = a->data[i];
        ga[i] += (*g)[i] * (std::fabs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0));
      }
    });
  }
  return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  require(a->rank() == 2 && b->rank() == 2, "matmul: operands must be rank 2");
  require(a->dim(1) == b->dim(0), "matmul: inner extents disagree");
  const int m = a->dim(0), k = a->dim(1), n = b->dim(1);
  auto out = zeros({m, n});
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = a->at(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) out->at(i, j) += av * b->at(p, j);
    }
  }
  if (Tape* t = Tape::active()) {
    t->record([a, b, out, m, k, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      auto& gb = adj.of(b);
      // dA = G * B^T: rows of g and b are contiguous.
      for (int i = 0; i < m; ++i) {
        const double* grow = &(*g)[static_cast<std::size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
          const double* brow = &b->data[static_cast<std::size_t>(p) * n];
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * k + p] += acc;
        }
      }
      // dB = A^T * G: accumulate row p of dB from row i of g scaled by a[i][p].
      for (int i = 0; i < m; ++i) {
        const double* grow = &(*g)[static_cast<std::size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
          const double av = a->data[static_cast<std::size_t>(i) * k + p];
          if (av == 0.0) continue;
          double* gbrow = &gb[static_cast<std::size_t>(p) * n];
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    });
  }
  return out;
}

TensorPtr transpose(const TensorPtr& a) {
  require(a->rank() == 2, "transpose: operand must be rank 2");
  const int m = a->dim(0), n = a->dim(1);
  auto out = zeros({n, m});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out->at(j, i) = a->at(i, j);
  }
  if (Tape* t = Tape::active()) {
    t->record([a, out, m, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          ga[static_cast<std::size_t>(i) * n + j] += (*g)[static_cast<std::size_t>(j) * m + i];
        }
      }
    });
  }
  return out;
}

TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& b) {
  require(x->rank() == 2 && b->rank() == 1, "add_rowvec: expects [m,n] and [n]");
  require(x->dim(1) == b->dim(0), "add_rowvec: width mismatch");
  const int m = x->dim(0), n = x->dim(1);
  auto out = zeros({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out->at(i, j) = x->at(i, j) + b->data[static_cast<std::size_t>(j)];
  }
  if (Tape* t = Tape::active()) {
    t->record([x, b, out, m, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      auto& gb = adj.of(b);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          const double gv = (*g)[static_cast<std::size_t>(i) * n + j];
          gx[static_cast<std::size_t>(i) * n + j] += gv;
          gb[static_cast<std::size_t>(j)] += gv;
        }
      }
    });
  }
  return out;
}

TensorPtr sub_colvec(const TensorPtr& x, const TensorPtr& v) {
  require(x->rank() == 2 && v->rank() == 1, "sub_colvec: expects [m,n] and [m]");
  require(x->dim(0) == v->dim(0), "sub_colvec: height mismatch");
  const int m = x->dim(0), n = x->dim(1);
  auto out = zeros({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out->at(i, j) = x->at(i, j) - v->data[static_cast<std::size_t>(i)];
  }
  if (Tape* t = Tape::active()) {
    t->record([x, v, out, m, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      auto& gv = adj.of(v);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          const double gval = (*g)[static_cast<std::size_t>(i) * n + j];
          gx[static_cast<std::size_t>(i) * n + j] += gval;
          gv[static_cast<std::size_t>(i)] -= gval;
        }
      }
    });
  }
  return out;
}

TensorPtr div_colvec(const TensorPtr& x, const TensorPtr& v) {
  require(x->rank() == 2 && v->rank() == 1, "div_colvec: expects [m,n] and [m]");
  require(x->dim(0) == v->dim(0), "div_colvec: height mismatch");
  const int m = x->dim(0), n = x->dim(1);
  auto out = zeros({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out->at(i, j) = x->at(i, j) / v->data[static_cast<std::size_t>(i)];
  }
  if (Tape* t = Tape::active()) {
    t->record([x, v, out, m, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      auto& gv = adj.of(v);
      for (int i = 0; i < m; ++i) {
        const double vi = v->data[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) {
          const double gval = (*g)[static_cast<std::size_t>(i) * n + j];
          gx[static_cast<std::size_t>(i) * n + j] += gval / vi;
          gv[static_cast<std::size_t>(i)] -= gval * x->at(i, j) / (vi * vi);
        }
      }
    });
  }
  return out;
}

TensorPtr outer_add(const TensorPtr& u, const TensorPtr& w) {
  require(u->rank() == 1 && w->rank() == 1, "outer_add: expects two rank-1 tensors");
  const int m = u->dim(0), n = w->dim(0);
  auto out = zeros({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out->at(i, j) = u->data[static_cast<std::size_t>(i)] + w->data[static_cast<std::size_t>(j)];
    }
  }
  if (Tape* t = Tape::active()) {
    t->record([u, w, out, m, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gu = adj.of(u);
      auto& gw = adj.of(w);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          const double gv = (*g)[static_cast<std::size_t>(i) * n + j];
          gu[static_cast<std::size_t>(i)] += gv;
          gw[static_cast<std::size_t>(j)] += gv;
        }
      }
    });
  }
  return out;
}

TensorPtr scale_by_scalar(const TensorPtr& x, const TensorPtr& s) {
  require(s->numel() == 1, "scale_by_scalar: scale must be a [1] tensor");
  auto out = zeros(x->shape);
  const double sv = s->data[0];
  for (std::size_t i = 0; i < x->numel(); ++i) out->data[i] = x->data[i] * sv;
  if (Tape* t = Tape::active()) {
    t->record([x, s, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      auto& gs = adj.of(s);
      const double sv = s->data[0];
      for (std::size_t i = 0; i < g->size(); ++i) {
        gx[i] += (*g)[i] * sv;
        gs[0] += (*g)[i] * x->data[i];
      }
    });
  }
  return out;
}

TensorPtr determinant(const TensorPtr& a) {
  require(a->rank() == 2 && a->dim(0) == a->dim(1), "determinant: input must be square");
  const int n = a->dim(0);
  std::vector<double> lu = a->data;
  std::vector<int> piv;
  const double det = lu_decompose(lu, n, piv);
  auto out = scalar(det);
  if (Tape* t = Tape::active()) {
    t->record([a, out, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g || (*g)[0] == 0.0) return;
      const double det = out->data[0];
      // Gradient |P| * P^-T; skipped when |P| has collapsed (the VIF clamp
      // upstream zeroes these paths anyway).
      if (std::fabs(det) < 1e-300) return;
      std::vector<double> lu = a->data;
      std::vector<int> piv;
      lu_decompose(lu, n, piv);
      auto& ga = adj.of(a);
      std::vector<double> col(static_cast<std::size_t>(n));
      for (int j = 0; j < n; ++j) {
        std::fill(col.begin(), col.end(), 0.0);
        col[static_cast<std::size_t>(j)] = 1.0;
        lu_solve(lu, piv, n, col);  // col = P^-1 e_j, i.e. column j of P^-1
        for (int i = 0; i < n; ++i) {
          // (P^-T)[j][i] = (P^-1)[i][j]
          ga[static_cast<std::size_t>(j) * n + i] += (*g)[0] * det * col[static_cast<std::size_t>(i)];
        }
      }
    });
  }
  return out;
}

TensorPtr drop_rowcol(const TensorPtr& a, int i) {
  require(a->rank() == 2 && a->dim(0) == a->dim(1), "drop_rowcol: input must be square");
  const int n = a->dim(0);
  require(i >= 0 && i < n, "drop_rowcol: index out of range");
  require(n >= 2, "drop_rowcol: matrix must be at least 2x2");
  auto out = zeros({n - 1, n - 1});
  for (int r = 0, ro = 0; r < n; ++r) {
    if (r == i) continue;
    for (int c = 0, co = 0; c < n; ++c) {
      if (c == i) continue;
      out->at(ro, co) = a->at(r, c);
      ++co;
    }
    ++ro;
  }
  if (Tape* t = Tape::active()) {
    t->record([a, out, i, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (int r = 0, ro = 0; r < n; ++r) {
        if (r == i) continue;
        for (int c = 0, co = 0; c < n; ++c) {
          if (c == i) continue;
          ga[static_cast<std::size_t>(r) * n + c] += (*g)[static_cast<std::size_t>(ro) * (n - 1) + co];
          ++co;
        }
        ++ro;
      }
    });
  }
  return out;
}

TensorPtr reshape(const TensorPtr& a, std::vector<int> shape) {
  const std::size_t n = checked_numel(shape);
  require(n == a->numel(), "reshape: element count mismatch");
  auto out = zeros(std::move(shape));
  out->data = a->data;
  if (Tape* t = Tape::active()) {
    t->record([a, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    });
  }
  return out;
}

TensorPtr vstack(const std::vector<TensorPtr>& parts) {
  require(!parts.empty(), "vstack: no parts");
  int cols = parts[0]->rank() == 1 ? parts[0]->dim(0) : parts[0]->dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    require(p->rank() == 1 || p->rank() == 2, "vstack: parts must be rank 1 or 2");
    const int w = p->rank() == 1 ? p->dim(0) : p->dim(1);
    require(w == cols, "vstack: width mismatch");
    rows += p->rank() == 1 ? 1 : p->dim(0);
  }
  auto out = zeros({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->data.begin(), p->data.end(), out->data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->numel();
  }
  if (Tape* t = Tape::active()) {
    t->record([parts, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      std::size_t off = 0;
      for (const auto& p : parts) {
        auto& gp = adj.of(p);
        for (std::size_t i = 0; i < p->numel(); ++i) gp[i] += (*g)[off + i];
        off += p->numel();
      }
    });
  }
  return out;
}

TensorPtr sum_all(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->data) s += v;
  auto out = scalar(s);
  if (Tape* t = Tape::active()) {
    t->record([a, out](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[0];
    });
  }
  return out;
}

TensorPtr mean_all(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->data) s += v;
  const double inv = 1.0 / static_cast<double>(a->numel());
  auto out = scalar(s * inv);
  if (Tape* t = Tape::active()) {
    t->record([a, out, inv](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[0] * inv;
    });
  }
  return out;
}

TensorPtr row_sum(const TensorPtr& x) {
  require(x->rank() == 2, "row_sum: operand must be rank 2");
  const int m = x->dim(0), n = x->dim(1);
  auto out = zeros({m});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += x->at(i, j);
    out->data[static_cast<std::size_t>(i)] = s;
  }
  if (Tape* t = Tape::active()) {
    t->record([x, out, m, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(i) * n + j] += (*g)[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

TensorPtr row_mean(const TensorPtr& x) {
  require(x->rank() == 2, "row_mean: operand must be rank 2");
  const int m = x->dim(0), n = x->dim(1);
  const double inv = 1.0 / n;
  auto out = zeros({m});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += x->at(i, j);
    out->data[static_cast<std::size_t>(i)] = s * inv;
  }
  if (Tape* t = Tape::active()) {
    t->record([x, out, m, n, inv](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(i) * n + j] += (*g)[static_cast<std::size_t>(i)] * inv;
      }
    });
  }
  return out;
}

TensorPtr row_std(const TensorPtr& x, double floor) {
  require(x->rank() == 2, "row_std: operand must be rank 2");
  const int m = x->dim(0), n = x->dim(1);
  auto out = zeros({m});
  std::vector<double> means(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += x->at(i, j);
    const double mu = s / n;
    means[static_cast<std::size_t>(i)] = mu;
    double ss = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = x->at(i, j) - mu;
      ss += d * d;
    }
    out->data[static_cast<std::size_t>(i)] = std::max(std::sqrt(ss / n), floor);
  }
  if (Tape* t = Tape::active()) {
    t->record([x, out, means, m, n, floor](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      for (int i = 0; i < m; ++i) {
        const double sd = out->data[static_cast<std::size_t>(i)];
        if (sd <= floor) continue;  // floored rows saturate
        const double gv = (*g)[static_cast<std::size_t>(i)];
        if (gv == 0.0) continue;
        const double mu = means[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) {
          gx[static_cast<std::size_t>(i) * n + j] += gv * (x->at(i, j) - mu) / (n * sd);
        }
      }
    });
  }
  return out;
}

TensorPtr row_norm(const TensorPtr& x, double floor) {
  require(x->rank() == 2, "row_norm: operand must be rank 2");
  const int m = x->dim(0), n = x->dim(1);
  auto out = zeros({m});
  for (int i = 0; i < m; ++i) {
    double ss = 0.0;
    for (int j = 0; j < n; ++j) ss += x->at(i, j) * x->at(i, j);
    out->data[static_cast<std::size_t>(i)] = std::max(std::sqrt(ss), floor);
  }
  if (Tape* t = Tape::active()) {
    t->record([x, out, m, n, floor](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      for (int i = 0; i < m; ++i) {
        const double nv = out->data[static_cast<std::size_t>(i)];
        if (nv <= floor) continue;
        const double gv = (*g)[static_cast<std::size_t>(i)];
        if (gv == 0.0) continue;
        for (int j = 0; j < n; ++j) {
          gx[static_cast<std::size_t>(i) * n + j] += gv * x->at(i, j) / nv;
        }
      }
    });
  }
  return out;
}

namespace {

// Softmax of `len` entries with stride `stride` starting at `base`.
void softmax_slice(const std::vector<double>& in, std::vector<double>& outv, std::size_t base,
                   std::size_t stride, int len) {
  double mx = in[base];
  for (int i = 1; i < len; ++i) mx = std::max(mx, in[base + static_cast<std::size_t>(i) * stride]);
  double denom = 0.0;
  for (int i = 0; i < len; ++i) {
    const double e = std::exp(in[base + static_cast<std::size_t>(i) * stride] - mx);
    outv[base + static_cast<std::size_t>(i) * stride] = e;
    denom += e;
  }
  for (int i = 0; i < len; ++i) outv[base + static_cast<std::size_t>(i) * stride] /= denom;
}

void softmax_slice_backward(const std::vector<double>& y, const std::vector<double>& g,
                            std::vector<double>& gx, std::size_t base, std::size_t stride, int len) {
  double dot = 0.0;
  for (int i = 0; i < len; ++i) {
    const std::size_t idx = base + static_cast<std::size_t>(i) * stride;
    dot += g[idx] * y[idx];
  }
  for (int i = 0; i < len; ++i) {
    const std::size_t idx = base + static_cast<std::size_t>(i) * stride;
    gx[idx] += y[idx] * (g[idx] - dot);
  }
}

}  // namespace

TensorPtr softmax(const TensorPtr& a, int axis) {
  require(a->rank() == 1 || a->rank() == 2, "softmax: operand must be rank 1 or 2");
  require(axis >= 0 && axis < a->rank(), "softmax: axis out of range");
  require(a->dim(axis) > 0, "softmax: axis is empty");
  auto out = zeros(a->shape);
  const int len = a->dim(axis);
  std::vector<std::pair<std::size_t, std::size_t>> slices;  // (base, stride)
  if (a->rank() == 1) {
    slices.emplace_back(0, 1);
  } else if (axis == 1) {
    for (int i = 0; i < a->dim(0); ++i) slices.emplace_back(static_cast<std::size_t>(i) * a->dim(1), 1);
  } else {
    for (int j = 0; j < a->dim(1); ++j) slices.emplace_back(static_cast<std::size_t>(j), static_cast<std::size_t>(a->dim(1)));
  }
  for (const auto& [base, stride] : slices) softmax_slice(a->data, out->data, base, stride, len);
  if (Tape* t = Tape::active()) {
    t->record([a, out, slices, len](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ga = adj.of(a);
      for (const auto& [base, stride] : slices) {
        softmax_slice_backward(out->data, *g, ga, base, stride, len);
      }
    });
  }
  return out;
}

TensorPtr masked_softmax_rows(const TensorPtr& e, const std::vector<unsigned char>& mask) {
  require(e->rank() == 2, "masked_softmax_rows: operand must be rank 2");
  const int m = e->dim(0), n = e->dim(1);
  require(mask.size() == e->numel(), "masked_softmax_rows: mask size mismatch");
  auto out = zeros({m, n});
  for (int i = 0; i < m; ++i) {
    double mx = -1e308;
    int support = 0;
    for (int j = 0; j < n; ++j) {
      if (mask[static_cast<std::size_t>(i) * n + j]) {
        mx = std::max(mx, e->at(i, j));
        ++support;
      }
    }
    require(support > 0, "masked_softmax_rows: empty neighborhood row");
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      if (!mask[static_cast<std::size_t>(i) * n + j]) continue;
      const double ev = std::exp(e->at(i, j) - mx);
      out->at(i, j) = ev;
      denom += ev;
    }
    for (int j = 0; j < n; ++j) {
      if (mask[static_cast<std::size_t>(i) * n + j]) out->at(i, j) /= denom;
    }
  }
  if (Tape* t = Tape::active()) {
    t->record([e, out, mask, m, n](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& ge = adj.of(e);
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          if (mask[idx]) dot += (*g)[idx] * out->data[idx];
        }
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          if (mask[idx]) ge[idx] += out->data[idx] * ((*g)[idx] - dot);
        }
      }
    });
  }
  return out;
}

TensorPtr conv1d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b, int stride,
                 int dilation, Padding pad) {
  require(x->rank() == 2, "conv1d: input must be [C_in, L]");
  require(w->rank() == 3, "conv1d: filters must be [C_out, C_in, k]");
  require(x->dim(0) == w->dim(1), "conv1d: C_in disagreement between input and filters");
  if (b) {
    require(b->rank() == 1 && b->dim(0) == w->dim(0), "conv1d: bias must be [C_out]");
  }
  const int c_in = x->dim(0), in_len = x->dim(1);
  const int c_out = w->dim(0), k = w->dim(2);
  const ConvGeometry geo = conv_geometry(in_len, k, stride, dilation, pad);
  const int out_len = geo.out_len;
  auto out = zeros({c_out, out_len});
  const int anchor = geo.span - geo.pad_left;
  // Valid tap range per output position, so the inner loops are branch-free:
  // tap i reads input j = base - i*dilation with base = stride*h + anchor.
  std::vector<int> tap_lo(static_cast<std::size_t>(out_len)), tap_hi(static_cast<std::size_t>(out_len));
  for (int h = 0; h < out_len; ++h) {
    const int base = stride * h + anchor;
    int lo = base - (in_len - 1) > 0 ? (base - (in_len - 1) + dilation - 1) / dilation : 0;
    int hi = std::min(k - 1, base / dilation);
    tap_lo[static_cast<std::size_t>(h)] = lo;
    tap_hi[static_cast<std::size_t>(h)] = hi;
  }
  for (int co = 0; co < c_out; ++co) {
    const double bias = b ? b->data[static_cast<std::size_t>(co)] : 0.0;
    double* orow = &out->data[static_cast<std::size_t>(co) * out_len];
    for (int h = 0; h < out_len; ++h) {
      const int base = stride * h + anchor;
      const int lo = tap_lo[static_cast<std::size_t>(h)], hi = tap_hi[static_cast<std::size_t>(h)];
      double a0 = 0.0;
      for (int ci = 0; ci < c_in; ++ci) {
        const double* xrow = &x->data[static_cast<std::size_t>(ci) * in_len];
        const double* wrow = &w->data[(static_cast<std::size_t>(co) * c_in + ci) * k];
        if (dilation == 1) {
          const double* xr = xrow + base;
#pragma omp simd reduction(+ : a0)
          for (int i = lo; i <= hi; ++i) a0 += wrow[i] * xr[-i];
        } else {
          for (int i = lo; i <= hi; ++i) a0 += wrow[i] * xrow[base - i * dilation];
        }
      }
      orow[h] = bias + a0;
    }
  }
  if (Tape* t = Tape::active()) {
    t->record([x, w, b, out, stride, dilation, anchor, c_in, c_out, k, in_len, out_len, tap_lo,
               tap_hi](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      auto& gw = adj.of(w);
      std::vector<double>* gb = b ? &adj.of(b) : nullptr;
      for (int co = 0; co < c_out; ++co) {
        for (int h = 0; h < out_len; ++h) {
          const double gv = (*g)[static_cast<std::size_t>(co) * out_len + h];
          if (gv == 0.0) continue;
          if (gb) (*gb)[static_cast<std::size_t>(co)] += gv;
          const int base = stride * h + anchor;
          const int lo = tap_lo[static_cast<std::size_t>(h)], hi = tap_hi[static_cast<std::size_t>(h)];
          for (int ci = 0; ci < c_in; ++ci) {
            const double* xrow = &x->data[static_cast<std::size_t>(ci) * in_len];
            const double* wrow = &w->data[(static_cast<std::size_t>(co) * c_in + ci) * k];
            double* gxrow = &gx[static_cast<std::size_t>(ci) * in_len];
            double* gwrow = &gw[(static_cast<std::size_t>(co) * c_in + ci) * k];
            if (dilation == 1) {
              const double* xr = xrow + base;
              double* gxr = gxrow + base;
#pragma omp simd
              for (int i = lo; i <= hi; ++i) {
                gwrow[i] += gv * xr[-i];
                gxr[-i] += gv * wrow[i];
              }
            } else {
              for (int i = lo; i <= hi; ++i) {
                const int j = base - i * dilation;
                gwrow[i] += gv * xrow[j];
                gxrow[j] += gv * wrow[i];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

TensorPtr maxpool1d(const TensorPtr& x, int window) {
  require(x->rank() == 2, "maxpool1d: input must be [C, L]");
  require(window >= 1, "maxpool1d: window must be >= 1");
  const int c = x->dim(0), in_len = x->dim(1);
  const int out_len = in_len / window;
  require(out_len >= 1, "maxpool1d: output length would be <= 0");
  auto out = zeros({c, out_len});
  std::vector<int> argmax(static_cast<std::size_t>(c) * out_len);
  for (int ci = 0; ci < c; ++ci) {
    for (int h = 0; h < out_len; ++h) {
      int best = h * window;
      double bv = x->at(ci, best);
      for (int i = 1; i < window; ++i) {
        const double v = x->at(ci, h * window + i);
        if (v > bv) {
          bv = v;
          best = h * window + i;
        }
      }
      out->at(ci, h) = bv;
      argmax[static_cast<std::size_t>(ci) * out_len + h] = best;
    }
  }
  if (Tape* t = Tape::active()) {
    t->record([x, out, argmax, c, out_len, in_len](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      for (int ci = 0; ci < c; ++ci) {
        for (int h = 0; h < out_len; ++h) {
          const std::size_t oidx = static_cast<std::size_t>(ci) * out_len + h;
          gx[static_cast<std::size_t>(ci) * in_len + argmax[oidx]] += (*g)[oidx];
        }
      }
    });
  }
  return out;
}

TensorPtr adaptive_avgpool1d(const TensorPtr& x, int target_len) {
  require(x->rank() == 2, "adaptive_avgpool1d: input must be [C, L]");
  require(target_len >= 1, "adaptive_avgpool1d: target length must be >= 1");
  const int c = x->dim(0), in_len = x->dim(1);
  auto out = zeros({c, target_len});
  for (int ci = 0; ci < c; ++ci) {
    for (int o = 0; o < target_len; ++o) {
      const int start = (o * in_len) / target_len;
      const int end = ((o + 1) * in_len + target_len - 1) / target_len;
      double s = 0.0;
      for (int j = start; j < end; ++j) s += x->at(ci, j);
      out->at(ci, o) = s / (end - start);
    }
  }
  if (Tape* t = Tape::active()) {
    t->record([x, out, c, in_len, target_len](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      for (int ci = 0; ci < c; ++ci) {
        for (int o = 0; o < target_len; ++o) {
          const int start = (o * in_len) / target_len;
          const int end = ((o + 1) * in_len + target_len - 1) / target_len;
          const double gv = (*g)[static_cast<std::size_t>(ci) * target_len + o] / (end - start);
          for (int j = start; j < end; ++j) gx[static_cast<std::size_t>(ci) * in_len + j] += gv;
        }
      }
    });
  }
  return out;
}

TensorPtr scale_channels(const TensorPtr& x, const TensorPtr& g) {
  require(x->rank() == 2 && g->rank() == 1, "scale_channels: expects [C,L] and [C]");
  require(x->dim(0) == g->dim(0), "scale_channels: channel count mismatch");
  const int c = x->dim(0), len = x->dim(1);
  auto out = zeros({c, len});
  for (int ci = 0; ci < c; ++ci) {
    const double gv = g->data[static_cast<std::size_t>(ci)];
    for (int j = 0; j < len; ++j) out->at(ci, j) = x->at(ci, j) * gv;
  }
  if (Tape* t = Tape::active()) {
    t->record([x, g, out, c, len](Adjoints& adj) {
      const auto* go = adj.find(out.get());
      if (!go) return;
      auto& gx = adj.of(x);
      auto& gg = adj.of(g);
      for (int ci = 0; ci < c; ++ci) {
        const double gv = g->data[static_cast<std::size_t>(ci)];
        for (int j = 0; j < len; ++j) {
          const std::size_t idx = static_cast<std::size_t>(ci) * len + j;
          gx[idx] += (*go)[idx] * gv;
          gg[static_cast<std::size_t>(ci)] += (*go)[idx] * x->data[idx];
        }
      }
    });
  }
  return out;
}

TensorPtr dropout(const TensorPtr& x, double p, bool train, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: p must satisfy 0 <= p < 1");
  if (!train || p == 0.0) {
    // Exact identity; still differentiable.
    auto out = zeros(x->shape);
    out->data = x->data;
    if (Tape* t = Tape::active()) {
      t->record([x, out](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (!g) return;
        auto& gx = adj.of(x);
        for (std::size_t i = 0; i < g->size(); ++i) gx[i] += (*g)[i];
      });
    }
    return out;
  }
  const double scale = 1.0 / (1.0 - p);
  std::vector<unsigned char> keep(x->numel());
  auto out = zeros(x->shape);
  for (std::size_t i = 0; i < x->numel(); ++i) {
    keep[i] = rng.uniform() >= p ? 1 : 0;
    out->data[i] = keep[i] ? x->data[i] * scale : 0.0;
  }
  if (Tape* t = Tape::active()) {
    t->record([x, out, keep, scale](Adjoints& adj) {
      const auto* g = adj.find(out.get());
      if (!g) return;
      auto& gx = adj.of(x);
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (keep[i]) gx[i] += (*g)[i] * scale;
      }
    });
  }
  return out;
}

}  // namespace pearnet::ops
