#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "pearnet/signal.hpp"

using namespace pearnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
  auto dir = fs::temp_directory_path() / "pearnet_signal_tests";
  fs::create_directories(dir);
  return dir / name;
}

Dataset tiny_dataset(int epoch_len = 8) {
  Dataset ds;
  ds.epoch_len = epoch_len;
  Rng rng(1);
  for (int i = 0; i < 6; ++i) {
    Epoch ep;
    ep.label = i % kNumClasses;
    for (int t = 0; t < epoch_len; ++t) ep.samples.push_back(rng.uniform(-3.0, 3.0));
    ds.epochs.push_back(std::move(ep));
  }
  ds.recount();
  return ds;
}

}  // namespace

TEST_CASE("csv round-trip is bit-exact") {
  auto ds = tiny_dataset();
  const auto path = temp_file("roundtrip.csv");
  save_dataset(ds, path.string(), FileFormat::kCsv);
  auto back = load_dataset(path.string(), FileFormat::kCsv, {.normalize = false});
  REQUIRE(back.size() == ds.size());
  CHECK(back.epoch_len == ds.epoch_len);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.epochs[i].label == ds.epochs[i].label);
    CHECK(back.epochs[i].samples == ds.epochs[i].samples);
  }
}

TEST_CASE("binary round-trip is bit-exact") {
  auto ds = tiny_dataset(13);
  const auto path = temp_file("roundtrip.pnet");
  save_dataset(ds, path.string(), FileFormat::kBin);
  auto back = load_dataset(path.string(), FileFormat::kBin, {.normalize = false});
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.epochs[i].label == ds.epochs[i].label);
    CHECK(back.epochs[i].samples == ds.epochs[i].samples);
  }
}

TEST_CASE("csv loader validates rows") {
  const auto path = temp_file("bad.csv");
  {
    std::ofstream out(path);
    out << "label,x0,x1,x2\n";
    out << "1,0.5,0.25,0.125\n";
    out << "2,0.5,0.25\n";  // short row
  }
  try {
    load_dataset(path.string(), FileFormat::kCsv);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 3);
  }

  {
    std::ofstream out(path);
    out << "label,x0,x1,x2\n";
    out << "7,0.5,0.25,0.125\n";  // label out of range
  }
  CHECK_THROWS_AS(load_dataset(path.string(), FileFormat::kCsv), ParseError);

  {
    std::ofstream out(path);
    out << "label,x0,x1,x2\n";
    out << "1,0.5,zzz,0.125\n";  // non-numeric
  }
  CHECK_THROWS_AS(load_dataset(path.string(), FileFormat::kCsv), ParseError);

  {
    std::ofstream out(path);  // empty
  }
  CHECK_THROWS_AS(load_dataset(path.string(), FileFormat::kCsv), InvalidArgument);

  {
    std::ofstream out(path);
    out << "label,x0,x1,x2\n";  // header only, zero epochs
  }
  CHECK_THROWS_AS(load_dataset(path.string(), FileFormat::kCsv), InvalidArgument);
}

TEST_CASE("csv loads two valid rows") {
  const auto path = temp_file("ok.csv");
  {
    std::ofstream out(path);
    out << "label,x0,x1,x2,x3\n";
    out << "0,1,2,3,4\n";
    out << "4,-1,-2,-3,-4\n";
  }
  auto ds = load_dataset(path.string(), FileFormat::kCsv, {.normalize = false});
  REQUIRE(ds.size() == 2);
  CHECK(ds.epochs[0].label == 0);
  CHECK(ds.epochs[1].label == 4);
  CHECK(ds.class_counts[0] == 1);
  CHECK(ds.class_counts[4] == 1);
  CHECK(ds.epochs[0].samples == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("normalization at load time") {
  const auto path = temp_file("norm.csv");
  {
    std::ofstream out(path);
    out << "label,x0,x1,x2,x3\n";
    out << "0,2,4,6,8\n";
  }
  auto ds = load_dataset(path.string(), FileFormat::kCsv);  // normalize on by default
  double mu = 0.0;
  for (double v : ds.epochs[0].samples) mu += v;
  CHECK(mu == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(oracle::stddev(ds.epochs[0].samples) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("segment partitions the epoch") {
  Epoch ep;
  for (int i = 0; i < 3000; ++i) ep.samples.push_back(i * 0.25);

  auto b5 = segment(ep, 5);
  CHECK(b5.s_count == 5);
  CHECK(b5.m_seg == 600);

  auto b2 = segment(ep, 2);
  CHECK(b2.m_seg == 1500);

  CHECK_THROWS_AS(segment(ep, 7), InvalidArgument);

  // Concatenating segments in order reproduces the epoch exactly.
  for (int s_count : {2, 5, 8, 3000}) {
    auto b = segment(ep, s_count);
    std::vector<double> cat;
    for (const auto& seg : b.segments) cat.insert(cat.end(), seg.begin(), seg.end());
    CHECK(cat == ep.samples);
  }
}

TEST_CASE("synthesize: determinism, counts, preconditions") {
  SynthSpec spec;
  spec.n_per_class = 10;
  spec.epoch_len = 300;
  auto a = synthesize(spec, 0);
  auto b = synthesize(spec, 0);
  REQUIRE(a.size() == 50);
  CHECK(a.class_counts == std::array<long, 5>{10, 10, 10, 10, 10});
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.epochs[i].label == b.epochs[i].label);
    CHECK(a.epochs[i].samples == b.epochs[i].samples);
  }
  auto c = synthesize(spec, 1);
  CHECK(a.epochs[0].samples != c.epochs[0].samples);

  SynthSpec bad = spec;
  bad.n_per_class = 0;
  CHECK_THROWS_AS(synthesize(bad, 0), InvalidArgument);
  bad = spec;
  bad.noise_sigma = -0.1;
  CHECK_THROWS_AS(synthesize(bad, 0), InvalidArgument);
}

TEST_CASE("synthesize: N3 spectral power is dominated by the delta band") {
  SynthSpec spec;
  spec.n_per_class = 3;
  spec.noise_sigma = 0.0;
  auto ds = synthesize(spec, 42);
  // Bin k corresponds to k/30 Hz at 100 Hz / 3000 samples; "below 2 Hz" is k < 60.
  for (const Epoch& ep : ds.epochs) {
    if (ep.label != 3) continue;
    double low = 0.0, total = 0.0;
    for (int k = 1; k <= spec.epoch_len / 2; ++k) {
      const double p = oracle::dft_power(ep.samples, k);
      total += p;
      if (k < 60) low += p;
    }
    CHECK(low / total > 0.9);
  }
}

TEST_CASE("synthesize: classes have distinct dominant bands") {
  SynthSpec spec;
  spec.n_per_class = 2;
  spec.noise_sigma = 0.0;
  auto ds = synthesize(spec, 7);
  auto band_power = [&](const Epoch& ep, double lo_hz, double hi_hz) {
    double s = 0.0;
    for (int k = std::max(1, static_cast<int>(lo_hz * 30)); k < static_cast<int>(hi_hz * 30); ++k) {
      s += oracle::dft_power(ep.samples, k);
    }
    return s;
  };
  for (const Epoch& ep : ds.epochs) {
    switch (ep.label) {
      case 0:  // W: alpha dominates theta and delta
        CHECK(band_power(ep, 8, 12.5) > band_power(ep, 4, 7.5));
        CHECK(band_power(ep, 8, 12.5) > band_power(ep, 0.4, 2.5));
        break;
      case 1:  // N1: theta dominates alpha
        CHECK(band_power(ep, 4, 7.5) > band_power(ep, 8, 12.5));
        break;
      case 3:  // N3: delta dominates theta
        CHECK(band_power(ep, 0.4, 2.5) > band_power(ep, 4, 7.5));
        break;
      default:
        break;
    }
  }
}
