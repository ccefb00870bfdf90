#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "pearnet/train.hpp"

using namespace pearnet;
namespace op = pearnet::ops;

namespace {

ModelConfig tiny_arch() {
  ModelConfig cfg;
  cfg.epoch_len = 40;
  cfg.segments = 4;
  cfg.levels = 1;
  cfg.spatial.channels_a = 2;
  cfg.spatial.kernel_a = 3;
  cfg.spatial.stride_a = 1;
  cfg.spatial.pool_a = 2;
  cfg.spatial.channels_b = 3;
  cfg.spatial.kernel_b = 3;
  cfg.spatial.pool_b = 2;
  cfg.spatial.se_reduction = 3;
  cfg.attention.heads = 2;
  cfg.attention.head_dim = 4;
  cfg.attention.adj_hidden = 6;
  cfg.classifier_hidden = 16;
  cfg.dropout = 0.0;
  return cfg;
}

// Distinct low-frequency sinusoid per class; separable at epoch_len 40.
Dataset tiny_separable_dataset(int n_per_class, std::uint64_t seed) {
  SynthSpec spec;
  spec.epoch_len = 40;
  spec.n_per_class = n_per_class;
  spec.noise_sigma = 0.05;
  for (int k = 0; k < kNumClasses; ++k) {
    spec.recipes[static_cast<std::size_t>(k)].components = {
        {0.05 + 0.1 * k, 0.07 + 0.1 * k, 1.0, false, false}};
  }
  Dataset ds = synthesize(spec, seed);
  normalize_epochs(ds);
  return ds;
}

std::vector<int> labels_of(const Dataset& ds) {
  std::vector<int> out;
  for (const auto& ep : ds.epochs) out.push_back(ep.label);
  return out;
}

}  // namespace

TEST_CASE("kfold: partition properties and stratification") {
  // 100 items, k=20 -> folds of 5.
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 5);
  auto folds = kfold_split(labels, 20, 3);
  REQUIRE(folds.size() == 20);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    CHECK(f.test.size() == 5);
    CHECK(f.train.size() == 95);
    for (std::size_t idx : f.test) {
      CHECK(seen.insert(idx).second);  // disjoint
    }
  }
  CHECK(seen.size() == 100);  // cover

  // Balanced 50-epoch set, k=5: every test fold holds 2 of each class.
  std::vector<int> bal(50);
  for (std::size_t i = 0; i < bal.size(); ++i) bal[i] = static_cast<int>(i / 10);
  auto folds5 = kfold_split(bal, 5, 7);
  for (const auto& f : folds5) {
    std::array<int, 5> counts{};
    for (std::size_t idx : f.test) ++counts[static_cast<std::size_t>(bal[idx])];
    for (int c : counts) CHECK(c == 2);
  }

  // Uneven sizes differ by at most one.
  std::vector<int> uneven(23);
  for (std::size_t i = 0; i < uneven.size(); ++i) uneven[i] = static_cast<int>(i % 3);
  auto folds4 = kfold_split(uneven, 4, 11);
  std::size_t lo = 1000, hi = 0, total = 0;
  for (const auto& f : folds4) {
    lo = std::min(lo, f.test.size());
    hi = std::max(hi, f.test.size());
    total += f.test.size();
  }
  CHECK(total == 23);
  CHECK(hi - lo <= 1);

  CHECK_THROWS_AS(kfold_split(labels, 101, 1), InvalidArgument);
  CHECK_THROWS_AS(kfold_split(labels, 1, 1), InvalidArgument);
}

TEST_CASE("adamw trajectory matches a hand-stepped oracle on a quadratic") {
  // f(theta) = 0.5 * c * theta^2, so g = c * theta.
  const double c = 3.0, theta0 = 1.25;

  for (bool amsgrad : {true, false}) {
    for (double wd : {0.0, 0.01}) {
      OptimizerConfig ocfg;
      ocfg.lr = 0.05;
      ocfg.weight_decay = wd;
      ocfg.amsgrad = amsgrad;

      auto theta = tensor({1}, {theta0}, true);
      AdamW opt(ocfg, {{"theta", theta}});

      // Independent reference stepper from the documented update equations.
      double ref = theta0, m = 0.0, v = 0.0, vmax = 0.0;
      for (int t = 1; t <= 10; ++t) {
        {
          Tape tape;
          TapeScope scope(tape);
          auto loss = op::mul_scalar(op::mul(theta, theta), 0.5 * c);
          theta->zero_grad();
          tape.backward(op::sum_all(loss));
        }
        opt.step();

        const double g = c * ref;
        ref *= 1.0 - ocfg.lr * wd;
        m = ocfg.beta1 * m + (1 - ocfg.beta1) * g;
        v = ocfg.beta2 * v + (1 - ocfg.beta2) * g * g;
        double second = v;
        if (amsgrad) {
          vmax = std::max(vmax, v);
          second = vmax;
        }
        const double mhat = m / (1 - std::pow(ocfg.beta1, t));
        const double denom = std::sqrt(second) / std::sqrt(1 - std::pow(ocfg.beta2, t)) + ocfg.eps;
        ref -= ocfg.lr * mhat / denom;

        INFO("amsgrad=" << amsgrad << " wd=" << wd << " t=" << t);
        CHECK(std::fabs(theta->data[0] - ref) < 1e-12);
      }
    }
  }
}

TEST_CASE("lr=0 with no decay leaves parameters untouched") {
  Dataset ds = tiny_separable_dataset(2, 5);
  PearNetModel model(tiny_arch(), 1);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.params()) before.push_back(p.value->data);

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 5;
  cfg.lr = 0.0;
  cfg.dropout = 0.0;
  cfg.k_folds = 2;
  cfg.segments = 4;
  cfg.levels = 1;
  cfg.heads = 2;
  cfg.optimizer.weight_decay = 0.0;
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  fit(model, ds, idx, cfg);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(model.params()[i].value->data == before[i]);
  }
}

TEST_CASE("fit overfits a tiny separable dataset (50 steps)") {
  Dataset ds = tiny_separable_dataset(4, 9);  // 20 epochs
  REQUIRE(ds.size() == 20);
  PearNetModel model(tiny_arch(), 2);

  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 20;  // one step per epoch
  cfg.lr = 0.01;
  cfg.dropout = 0.0;
  cfg.k_folds = 2;
  cfg.segments = 4;
  cfg.levels = 1;
  cfg.heads = 2;
  cfg.seed = 4;
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto res = fit(model, ds, idx, cfg);
  REQUIRE(res.trace.size() == 50);
  CHECK(res.trace.back().total < 0.9 * res.trace.front().total);
}

TEST_CASE("evaluate: metrics from closed-form confusions and error paths") {
  // All-correct predictions.
  Confusion perfect{};
  for (int k = 0; k < 5; ++k) perfect[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)] = 4;
  auto rep = MetricsReport::from_confusion(perfect);
  CHECK(rep.accuracy == 1.0);
  CHECK(rep.macro_f1 == 1.0);

  // [[2,1],[1,2]] padded to 5 classes: the two present classes score 2/3.
  Confusion two{};
  two[0][0] = 2;
  two[0][1] = 1;
  two[1][0] = 1;
  two[1][1] = 2;
  rep = MetricsReport::from_confusion(two);
  CHECK(rep.per_class_f1[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(rep.per_class_f1[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  for (int k = 2; k < 5; ++k) CHECK(rep.per_class_f1[static_cast<std::size_t>(k)] == 0.0);
  CHECK(rep.macro_f1 == doctest::Approx((2.0 / 3 + 2.0 / 3) / 5).epsilon(1e-12));
  CHECK(rep.accuracy == doctest::Approx(4.0 / 6).epsilon(1e-12));

  // Everything predicted as one class on a balanced set: F1 = 1/3 there, 0 elsewhere.
  Confusion onecol{};
  for (int k = 0; k < 5; ++k) onecol[static_cast<std::size_t>(k)][2] = 10;
  rep = MetricsReport::from_confusion(onecol);
  CHECK(rep.per_class_f1[2] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  for (int k = 0; k < 5; ++k) {
    if (k != 2) CHECK(rep.per_class_f1[static_cast<std::size_t>(k)] == 0.0);
  }
  CHECK(rep.macro_f1 == doctest::Approx(1.0 / 15).epsilon(1e-12));

  // Macro-F1 is exactly the mean of the per-class F1s on random confusions.
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Confusion c{};
    for (auto& row : c) {
      for (auto& cell : row) cell = static_cast<long>(rng.below(7));
    }
    auto r = MetricsReport::from_confusion(c);
    const double mean =
        (r.per_class_f1[0] + r.per_class_f1[1] + r.per_class_f1[2] + r.per_class_f1[3] +
         r.per_class_f1[4]) /
        5.0;
    CHECK(r.macro_f1 == doctest::Approx(mean).epsilon(1e-15));
    long total = 0;
    for (const auto& row : c) {
      for (long cell : row) total += cell;
    }
    CHECK(r.total == total);
  }

  // evaluate() rejects an empty index set; confusion sums to the sample count.
  Dataset ds = tiny_separable_dataset(2, 21);
  PearNetModel model(tiny_arch(), 3);
  CHECK_THROWS_AS(evaluate(model, ds, {}), InvalidArgument);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto er = evaluate(model, ds, idx);
  CHECK(er.total == static_cast<long>(ds.size()));
}

TEST_CASE("cross-validation is reproducible and pools fold confusions") {
  Dataset ds = tiny_separable_dataset(4, 33);  // 20 epochs
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.lr = 0.005;
  cfg.dropout = 0.0;
  cfg.k_folds = 2;
  cfg.segments = 4;
  cfg.levels = 1;
  cfg.heads = 2;
  cfg.seed = 12;

  auto r1 = run_cross_validation(tiny_arch(), cfg, ds);
  auto r2 = run_cross_validation(tiny_arch(), cfg, ds);
  CHECK(r1.pooled.to_json() == r2.pooled.to_json());
  REQUIRE(r1.fold_reports.size() == 2);
  for (std::size_t f = 0; f < 2; ++f) {
    CHECK(r1.fold_reports[f].to_json() == r2.fold_reports[f].to_json());
  }

  long fold_total = 0;
  for (const auto& rep : r1.fold_reports) fold_total += rep.total;
  CHECK(r1.pooled.total == fold_total);
  CHECK(r1.pooled.total == static_cast<long>(ds.size()));

  // A different seed changes the trace.
  TrainConfig cfg2 = cfg;
  cfg2.seed = 13;
  auto r3 = run_cross_validation(tiny_arch(), cfg2, ds);
  CHECK(r3.trace.front().total != r1.trace.front().total);
}
