#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>

#include "doctest.h"
#include "fd_check.hpp"
#include "oracles.hpp"
#include "pearnet/ops.hpp"

using namespace pearnet;
namespace op = pearnet::ops;

namespace {

TensorPtr rand_tensor(Rng& rng, std::vector<int> shape, double lo = -2.0, double hi = 2.0,
                      bool requires_grad = true) {
  auto t = zeros(std::move(shape), requires_grad);
  for (double& v : t->data) v = rng.uniform(lo, hi);
  return t;
}

// Keeps values away from the kinks of relu/abs/clamp so FD stays valid.
TensorPtr rand_tensor_away_from(Rng& rng, std::vector<int> shape, double kink, double margin) {
  auto t = rand_tensor(rng, std::move(shape));
  for (double& v : t->data) {
    if (std::fabs(v - kink) < margin) v += (v >= kink ? margin : -margin);
  }
  return t;
}

// Loss = sum(op_output * fixed random weights); weights break symmetry.
TensorPtr weighted_sum(const TensorPtr& y, const TensorPtr& r) { return op::sum_all(op::mul(y, r)); }

}  // namespace

TEST_CASE("conv1d identity and delay kernels (causal-left)") {
  auto x = tensor({1, 4}, {1, 2, 3, 4});
  auto w_id = tensor({1, 1, 1}, {1.0});
  auto y = op::conv1d(x, w_id, nullptr, 1, 1, op::Padding::kCausalLeft);
  CHECK(y->shape == std::vector<int>{1, 4});
  CHECK(y->data == x->data);

  // f(0)=0, f(1)=1 is a pure one-step delay.
  auto w_delay = tensor({1, 1, 2}, {0.0, 1.0});
  auto d = op::conv1d(x, w_delay, nullptr, 1, 1, op::Padding::kCausalLeft);
  CHECK(d->data == std::vector<double>{0, 1, 2, 3});
}

TEST_CASE("conv1d matches brute-force dilated sum") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto xv = oracle::random_vec(rng, 16);
    auto fv = oracle::random_vec(rng, 3);
    auto x = tensor({1, 16}, xv);
    auto w = tensor({1, 1, 3}, fv);
    auto y = op::conv1d(x, w, nullptr, 1, 2, op::Padding::kCausalLeft);
    auto ref = oracle::causal_conv(xv, fv, 2);
    REQUIRE(y->numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv1d multi-channel, strided and padded vs oracle") {
  Rng rng(11);
  struct Case {
    int c_in, c_out, k, len, stride, dilation;
    op::Padding pad;
  };
  const Case cases[] = {
      {2, 3, 3, 12, 1, 1, op::Padding::kNone},
      {3, 2, 4, 15, 2, 1, op::Padding::kNone},
      {2, 2, 3, 10, 1, 2, op::Padding::kCausalLeft},
      {1, 4, 5, 11, 1, 1, op::Padding::kSymmetric},
      {3, 3, 2, 9, 1, 3, op::Padding::kSymmetric},
  };
  for (const auto& c : cases) {
    std::vector<std::vector<double>> xs(c.c_in);
    for (auto& row : xs) row = oracle::random_vec(rng, c.len);
    std::vector<std::vector<std::vector<double>>> ws(c.c_out);
    for (auto& co : ws) {
      co.resize(c.c_in);
      for (auto& ci : co) ci = oracle::random_vec(rng, c.k);
    }
    std::vector<double> bias = oracle::random_vec(rng, c.c_out);

    std::vector<double> flatx, flatw;
    for (const auto& r : xs) flatx.insert(flatx.end(), r.begin(), r.end());
    for (const auto& co : ws) {
      for (const auto& ci : co) flatw.insert(flatw.end(), ci.begin(), ci.end());
    }
    auto y = op::conv1d(tensor({c.c_in, c.len}, flatx), tensor({c.c_out, c.c_in, c.k}, flatw),
                        tensor({c.c_out}, bias), c.stride, c.dilation, c.pad);

    const int span = (c.k - 1) * c.dilation;
    int pl = 0, pr = 0;
    if (c.pad == op::Padding::kCausalLeft) pl = span;
    if (c.pad == op::Padding::kSymmetric) {
      pl = span / 2;
      pr = span - pl;
    }
    auto ref = oracle::conv1d(xs, ws, bias, c.stride, c.dilation, pl, pr);
    REQUIRE(y->dim(0) == static_cast<int>(ref.size()));
    REQUIRE(y->dim(1) == static_cast<int>(ref[0].size()));
    for (int co = 0; co < y->dim(0); ++co) {
      for (int h = 0; h < y->dim(1); ++h) {
        CHECK(y->at(co, h) == doctest::Approx(ref[co][h]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("conv1d rejects bad geometry") {
  auto x = tensor({2, 8}, std::vector<double>(16, 0.0));
  auto w = tensor({1, 3, 3}, std::vector<double>(9, 0.0));  // C_in mismatch
  CHECK_THROWS_AS(op::conv1d(x, w, nullptr, 1, 1, op::Padding::kNone), InvalidArgument);
  auto w2 = tensor({1, 2, 9}, std::vector<double>(18, 0.0));  // kernel longer than input
  CHECK_THROWS_AS(op::conv1d(x, w2, nullptr, 1, 1, op::Padding::kNone), InvalidArgument);
  auto w3 = tensor({1, 2, 3}, std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(op::conv1d(x, w3, nullptr, 2, 1, op::Padding::kCausalLeft), InvalidArgument);
}

TEST_CASE("conv1d causal-left never looks at the future") {
  Rng rng(3);
  auto base = oracle::random_vec(rng, 12);
  auto fv = oracle::random_vec(rng, 3);
  auto w = tensor({1, 1, 3}, fv);
  auto y0 = op::conv1d(tensor({1, 12}, base), w, nullptr, 1, 2, op::Padding::kCausalLeft);
  for (int t = 0; t < 12; ++t) {
    auto pert = base;
    pert[t] += 5.0;
    auto y1 = op::conv1d(tensor({1, 12}, pert), w, nullptr, 1, 2, op::Padding::kCausalLeft);
    for (int h = 0; h < t; ++h) CHECK(y1->data[h] == y0->data[h]);
  }
}

TEST_CASE("simple primitive values") {
  auto r = op::relu(tensor({3}, {-1, 0, 2}));
  CHECK(r->data == std::vector<double>{0, 0, 2});

  auto s = op::softmax(tensor({2}, {0, 0}), 0);
  CHECK(s->data[0] == doctest::Approx(0.5));
  CHECK(s->data[1] == doctest::Approx(0.5));

  auto det = op::determinant(tensor({2, 2}, {1, 0.5, 0.5, 1}));
  CHECK(det->data[0] == doctest::Approx(0.75).epsilon(1e-14));

  // 3x3 with known determinant (-306).
  auto det3 = op::determinant(tensor({3, 3}, {6, 1, 1, 4, -2, 5, 2, 8, 7}));
  CHECK(det3->data[0] == doctest::Approx(-306.0).epsilon(1e-12));

  CHECK_THROWS_AS(op::determinant(tensor({2, 3}, std::vector<double>(6, 1.0))), InvalidArgument);
  CHECK_THROWS_AS(op::softmax(tensor({2}, {0, 0}), 1), InvalidArgument);
}

TEST_CASE("maxpool and adaptive average pool") {
  auto x = tensor({1, 6}, {1, 5, 2, 2, 9, 0});
  auto mp = op::maxpool1d(x, 2);
  CHECK(mp->data == std::vector<double>{5, 2, 9});

  auto ap = op::adaptive_avgpool1d(x, 2);
  CHECK(ap->data[0] == doctest::Approx((1 + 5 + 2) / 3.0));
  CHECK(ap->data[1] == doctest::Approx((2 + 9 + 0) / 3.0));

  auto ap1 = op::adaptive_avgpool1d(x, 1);
  CHECK(ap1->data[0] == doctest::Approx(19.0 / 6.0));

  CHECK_THROWS_AS(op::maxpool1d(x, 7), InvalidArgument);
}

TEST_CASE("backward on trivial graphs") {
  // loss = sum(x) -> grad ones
  auto x = tensor({3}, {4, 5, 6}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    auto loss = op::sum_all(x);
    tape.backward(loss);
  }
  CHECK(x->grad == std::vector<double>{1, 1, 1});

  // loss = sum(x*x), x=[1,2,3] -> grad [2,4,6]
  auto x2 = tensor({3}, {1, 2, 3}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    auto loss = op::sum_all(op::mul(x2, x2));
    tape.backward(loss);
  }
  CHECK(x2->grad == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward validates scalar loss and accumulates") {
  auto x = tensor({2}, {1, 2}, true);
  Tape tape;
  TapeScope scope(tape);
  auto y = op::mul_scalar(x, 3.0);
  CHECK_THROWS_AS(tape.backward(y), InvalidArgument);

  auto loss = op::sum_all(y);
  tape.backward(loss);
  CHECK(x->grad == std::vector<double>{3, 3});
  tape.backward(loss);  // repeated call without reset accumulates
  CHECK(x->grad == std::vector<double>{6, 6});
}

TEST_CASE("tensor never recorded keeps zero grad") {
  auto x = tensor({2}, {1, 2}, true);
  auto unused = tensor({2}, {7, 8}, true);
  Tape tape;
  TapeScope scope(tape);
  auto loss = op::sum_all(x);
  tape.backward(loss);
  CHECK(unused->grad == std::vector<double>{0, 0});
}

TEST_CASE("dropout: eval identity, train scaling, grad routing") {
  Rng rng(5);
  auto x = rand_tensor(rng, {4, 5});
  Rng drop_rng(17);
  auto eval_out = op::dropout(x, 0.5, false, drop_rng);
  CHECK(std::memcmp(eval_out->data.data(), x->data.data(), sizeof(double) * x->numel()) == 0);

  Rng drop_rng2(17);
  auto train_out = op::dropout(x, 0.5, true, drop_rng2);
  int kept = 0;
  for (std::size_t i = 0; i < x->numel(); ++i) {
    if (train_out->data[i] != 0.0) {
      ++kept;
      CHECK(train_out->data[i] == doctest::Approx(x->data[i] * 2.0));
    }
  }
  CHECK(kept > 0);
  CHECK(kept < static_cast<int>(x->numel()));
  CHECK_THROWS_AS(op::dropout(x, 1.0, true, drop_rng2), InvalidArgument);
}

TEST_CASE("determinism: identical seeds give bit-identical outputs and gradients") {
  auto run = [](std::vector<double>* out, std::vector<double>* grads) {
    Rng rng(99);
    auto x = rand_tensor(rng, {3, 4});
    auto w = rand_tensor(rng, {2, 3, 2});
    Tape tape;
    TapeScope scope(tape);
    auto y = op::conv1d(x, w, nullptr, 1, 1, op::Padding::kCausalLeft);
    auto z = op::sigmoid(op::mul_scalar(y, 0.7));
    auto loss = op::sum_all(z);
    tape.backward(loss);
    *out = z->data;
    *grads = x->grad;
    grads->insert(grads->end(), w->grad.begin(), w->grad.end());
  };
  std::vector<double> o1, g1, o2, g2;
  run(&o1, &g1);
  run(&o2, &g2);
  CHECK(std::memcmp(o1.data(), o2.data(), sizeof(double) * o1.size()) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(double) * g1.size()) == 0);
}

TEST_CASE("gradient check: every primitive vs central differences") {
  Rng rng(2024);
  const double tol = 1e-5;

  auto check_unary = [&](const char* name, auto make_graph, const TensorPtr& x) {
    auto r = rand_tensor(rng, x->shape, 0.5, 1.5, false);
    auto rep = fdcheck::check([&] { return weighted_sum(make_graph(x), r); }, {x});
    INFO(name);
    CHECK(rep.max_rel_err < tol);
  };

  SUBCASE("elementwise") {
    auto a = rand_tensor(rng, {3, 4});
    auto b = rand_tensor_away_from(rng, {3, 4}, 0.0, 0.3);  // divisor away from 0
    auto r = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
    for (auto [name, fn] : std::initializer_list<
             std::pair<const char*, TensorPtr (*)(const TensorPtr&, const TensorPtr&)>>{
             {"add", +[](const TensorPtr& u, const TensorPtr& v) { return op::add(u, v); }},
             {"sub", +[](const TensorPtr& u, const TensorPtr& v) { return op::sub(u, v); }},
             {"mul", +[](const TensorPtr& u, const TensorPtr& v) { return op::mul(u, v); }},
             {"div", +[](const TensorPtr& u, const TensorPtr& v) { return op::div(u, v); }}}) {
      auto rep = fdcheck::check([&] { return weighted_sum(fn(a, b), r); }, {a, b});
      INFO(name);
      CHECK(rep.max_rel_err < tol);
    }
    check_unary("add_scalar", [](const TensorPtr& t) { return op::add_scalar(t, 1.7); },
                rand_tensor(rng, {2, 3}));
    check_unary("mul_scalar", [](const TensorPtr& t) { return op::mul_scalar(t, -2.3); },
                rand_tensor(rng, {2, 3}));
    check_unary("relu", [](const TensorPtr& t) { return op::relu(t); },
                rand_tensor_away_from(rng, {3, 3}, 0.0, 0.05));
    check_unary("leaky_relu", [](const TensorPtr& t) { return op::leaky_relu(t, 0.2); },
                rand_tensor_away_from(rng, {3, 3}, 0.0, 0.05));
    check_unary("sigmoid", [](const TensorPtr& t) { return op::sigmoid(t); },
                rand_tensor(rng, {3, 3}));
    check_unary("abs", [](const TensorPtr& t) { return op::abs(t); },
                rand_tensor_away_from(rng, {3, 3}, 0.0, 0.05));
    check_unary("clamp", [](const TensorPtr& t) { return op::clamp(t, -1.0, 1.0); },
                rand_tensor_away_from(rng, {3, 3}, 1.0, 0.05));
    check_unary("log_clamped", [](const TensorPtr& t) { return op::log_clamped(t, 1e-12); },
                rand_tensor(rng, {3, 3}, 0.2, 2.0));
    check_unary("smooth_l1", [](const TensorPtr& t) { return op::smooth_l1(t); },
                rand_tensor_away_from(rng, {3, 3}, 1.0, 0.05));
  }

  SUBCASE("linear algebra") {
    auto a = rand_tensor(rng, {3, 4});
    auto b = rand_tensor(rng, {4, 2});
    auto r = rand_tensor(rng, {3, 2}, 0.5, 1.5, false);
    auto rep = fdcheck::check([&] { return weighted_sum(op::matmul(a, b), r); }, {a, b});
    CHECK(rep.max_rel_err < tol);

    auto x = rand_tensor(rng, {3, 4});
    auto rt = rand_tensor(rng, {4, 3}, 0.5, 1.5, false);
    rep = fdcheck::check([&] { return weighted_sum(op::transpose(x), rt); }, {x});
    CHECK(rep.max_rel_err < tol);

    auto bias = rand_tensor(rng, {4});
    auto rr = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
    rep = fdcheck::check([&] { return weighted_sum(op::add_rowvec(x, bias), rr); }, {x, bias});
    CHECK(rep.max_rel_err < tol);

    auto cv = rand_tensor_away_from(rng, {3}, 0.0, 0.4);
    rep = fdcheck::check([&] { return weighted_sum(op::sub_colvec(x, cv), rr); }, {x, cv});
    CHECK(rep.max_rel_err < tol);
    rep = fdcheck::check([&] { return weighted_sum(op::div_colvec(x, cv), rr); }, {x, cv});
    CHECK(rep.max_rel_err < tol);

    auto u = rand_tensor(rng, {3});
    auto w = rand_tensor(rng, {4});
    rep = fdcheck::check([&] { return weighted_sum(op::outer_add(u, w), rr); }, {u, w});
    CHECK(rep.max_rel_err < tol);

    // Well-conditioned matrix: diagonally dominated random.
    auto m = rand_tensor(rng, {4, 4}, -0.3, 0.3);
    for (int i = 0; i < 4; ++i) m->at(i, i) += 2.0;
    rep = fdcheck::check([&] { return op::determinant(m); }, {m});
    CHECK(rep.max_rel_err < tol);

    auto rm = rand_tensor(rng, {3, 3}, 0.5, 1.5, false);
    rep = fdcheck::check([&] { return weighted_sum(op::drop_rowcol(m, 2), rm); }, {m});
    CHECK(rep.max_rel_err < tol);
  }

  SUBCASE("shape and reductions") {
    auto x = rand_tensor(rng, {3, 4});
    auto rv = rand_tensor(rng, {12}, 0.5, 1.5, false);
    auto rep = fdcheck::check([&] { return weighted_sum(op::reshape(x, {12}), rv); }, {x});
    CHECK(rep.max_rel_err < tol);

    auto p1 = rand_tensor(rng, {4});
    auto p2 = rand_tensor(rng, {2, 4});
    auto rs = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
    rep = fdcheck::check([&] { return weighted_sum(op::vstack({p1, p2}), rs); }, {p1, p2});
    CHECK(rep.max_rel_err < tol);

    rep = fdcheck::check([&] { return op::sum_all(x); }, {x});
    CHECK(rep.max_rel_err < tol);
    rep = fdcheck::check([&] { return op::mean_all(x); }, {x});
    CHECK(rep.max_rel_err < tol);

    auto rrow = rand_tensor(rng, {3}, 0.5, 1.5, false);
    rep = fdcheck::check([&] { return weighted_sum(op::row_sum(x), rrow); }, {x});
    CHECK(rep.max_rel_err < tol);
    rep = fdcheck::check([&] { return weighted_sum(op::row_mean(x), rrow); }, {x});
    CHECK(rep.max_rel_err < tol);
    rep = fdcheck::check([&] { return weighted_sum(op::row_std(x, 1e-8), rrow); }, {x});
    CHECK(rep.max_rel_err < tol);
    rep = fdcheck::check([&] { return weighted_sum(op::row_norm(x, 1e-8), rrow); }, {x});
    CHECK(rep.max_rel_err < tol);
  }

  SUBCASE("softmax and masked softmax") {
    auto x = rand_tensor(rng, {3, 4});
    auto r = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
    for (int axis : {0, 1}) {
      auto rep = fdcheck::check([&] { return weighted_sum(op::softmax(x, axis), r); }, {x});
      INFO("axis " << axis);
      CHECK(rep.max_rel_err < tol);
    }
    std::vector<unsigned char> mask = {1, 1, 0, 1, 0, 1, 1, 0, 1, 0, 1, 1};
    auto rep = fdcheck::check([&] { return weighted_sum(op::masked_softmax_rows(x, mask), r); }, {x});
    CHECK(rep.max_rel_err < tol);

    auto y = op::masked_softmax_rows(x, mask);
    for (int i = 0; i < 3; ++i) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) {
        if (!mask[static_cast<std::size_t>(i) * 4 + j]) CHECK(y->at(i, j) == 0.0);
        s += y->at(i, j);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("conv, pooling, gating, dropout") {
    auto x = rand_tensor(rng, {2, 10});
    auto w = rand_tensor(rng, {3, 2, 3});
    auto b = rand_tensor(rng, {3});
    for (auto pad : {op::Padding::kNone, op::Padding::kCausalLeft, op::Padding::kSymmetric}) {
      const int stride = pad == op::Padding::kNone ? 2 : 1;
      const int out_len = op::conv1d_out_len(10, 3, stride, 2, pad);
      auto r = rand_tensor(rng, {3, out_len}, 0.5, 1.5, false);
      auto rep = fdcheck::check(
          [&] { return weighted_sum(op::conv1d(x, w, b, stride, 2, pad), r); }, {x, w, b});
      CHECK(rep.max_rel_err < tol);
    }

    auto rp = rand_tensor(rng, {2, 5}, 0.5, 1.5, false);
    auto rep = fdcheck::check([&] { return weighted_sum(op::maxpool1d(x, 2), rp); }, {x});
    CHECK(rep.max_rel_err < tol);

    auto ra = rand_tensor(rng, {2, 3}, 0.5, 1.5, false);
    rep = fdcheck::check([&] { return weighted_sum(op::adaptive_avgpool1d(x, 3), ra); }, {x});
    CHECK(rep.max_rel_err < tol);

    auto gch = rand_tensor(rng, {2});
    auto rg = rand_tensor(rng, {2, 10}, 0.5, 1.5, false);
    rep = fdcheck::check([&] { return weighted_sum(op::scale_channels(x, gch), rg); }, {x, gch});
    CHECK(rep.max_rel_err < tol);

    // Dropout in train mode: the mask must be identical across FD evaluations,
    // so reseed the rng inside the forward closure.
    rep = fdcheck::check(
        [&] {
          Rng drop_rng(42);
          return weighted_sum(op::dropout(x, 0.4, true, drop_rng), rg);
        },
        {x});
    CHECK(rep.max_rel_err < tol);
    rep = fdcheck::check(
        [&] {
          Rng drop_rng(42);
          return weighted_sum(op::dropout(x, 0.4, false, drop_rng), rg);
        },
        {x});
    CHECK(rep.max_rel_err < tol);
  }
}
