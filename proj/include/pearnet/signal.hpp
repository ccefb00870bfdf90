#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pearnet/errors.hpp"
#include "pearnet/rng.hpp"

namespace pearnet {

inline constexpr int kNumClasses = 5;  // W, N1, N2, N3, REM
inline constexpr int kDefaultEpochLen = 3000;  // 30 s at 100 Hz

// One 30-second single-channel recording window with its stage label.
struct Epoch {
  std::vector<double> samples;
  int label = 0;  // 0..4
};

struct Dataset {
  int epoch_len = kDefaultEpochLen;
  std::vector<Epoch> epochs;
  std::array<long, kNumClasses> class_counts{};

  void recount();
  std::size_t size() const { return epochs.size(); }
};

// Contiguous, non-overlapping, order-preserving slices of one epoch.
struct SegmentBatch {
  int s_count = 0;
  int m_seg = 0;
  std::vector<std::vector<double>> segments;
};

enum class FileFormat { kCsv, kBin };

struct LoadOptions {
  // Per-epoch z-score (mean 0, std 1, std floor 1e-8). Applied at load time;
  // disable for bit-exact round-trips.
  bool normalize = true;
};

Dataset load_dataset(const std::string& path, FileFormat format, const LoadOptions& opts = {});
void save_dataset(const Dataset& ds, const std::string& path, FileFormat format);

SegmentBatch segment(const Epoch& epoch, int s_count);

// In-place per-epoch z-score with std floor 1e-8.
void normalize_epochs(Dataset& ds);

// Synthetic 5-class generator. Each class mixes sinusoid (or sawtooth)
// components drawn from fixed frequency bands, optionally gated by burst
// envelopes, plus white Gaussian noise.
struct WaveComponent {
  double freq_lo = 0.0;   // Hz
  double freq_hi = 0.0;   // Hz
  double amplitude = 1.0;
  bool sawtooth = false;
  bool burst = false;      // gate by short Gaussian envelopes
  int burst_count = 6;     // envelopes per epoch (burst components only)
  double burst_sigma = 0.7;  // envelope width in seconds
};

struct ClassRecipe {
  std::vector<WaveComponent> components;
};

struct SynthSpec {
  int n_per_class = 50;
  double noise_sigma = 0.5;
  int epoch_len = kDefaultEpochLen;
  std::array<ClassRecipe, kNumClasses> recipes = default_recipes();

  static std::array<ClassRecipe, kNumClasses> default_recipes();
};

// Pure function of its arguments: identical spec and seed give identical
// datasets. Epochs are emitted class-major (all W, then all N1, ...).
Dataset synthesize(const SynthSpec& spec, std::uint64_t seed);

}  // namespace pearnet
