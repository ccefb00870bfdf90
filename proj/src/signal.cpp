#include "pearnet/signal.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pearnet {

namespace {

constexpr char kBinMagic[4] = {'P', 'N', 'E', 'T'};
constexpr std::uint16_t kBinVersion = 1;

// The binary format is little-endian float64/uints; this code assumes a
// little-endian host, which holds for every platform this project targets.
template <class T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool read_raw(std::istream& in, T* v) {
  in.read(reinterpret_cast<char*>(v), sizeof(T));
  return static_cast<bool>(in);
}

void zscore(std::vector<double>& v) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  const double sd = std::max(std::sqrt(ss / static_cast<double>(v.size())), 1e-8);
  for (double& x : v) x = (x - mu) / sd;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("empty dataset file: " + path);

  // Header: label,x0,...,x{n-1}
  long width = -1;  // sample columns
  {
    std::stringstream ss(line);
    std::string cell;
    long cols = 0;
    while (std::getline(ss, cell, ',')) ++cols;
    if (cols < 2) throw ParseError("csv header must be label,x0,...", 1);
    width = cols - 1;
  }

  Dataset ds;
  ds.epoch_len = static_cast<int>(width);
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (!std::getline(ss, cell, ',')) throw ParseError("missing label", row);
    Epoch ep;
    try {
      std::size_t pos = 0;
      ep.label = std::stoi(cell, &pos);
      if (pos != cell.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ParseError("label is not an integer: '" + cell + "'", row);
    }
    if (ep.label < 0 || ep.label >= kNumClasses) {
      throw ParseError("label outside [0,4]: " + std::to_string(ep.label), row);
    }
    ep.samples.reserve(static_cast<std::size_t>(width));
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') {
        throw ParseError("malformed sample value: '" + cell + "'", row);
      }
      ep.samples.push_back(v);
    }
    if (static_cast<long>(ep.samples.size()) != width) {
      throw ParseError("expected " + std::to_string(width) + " samples, got " +
                           std::to_string(ep.samples.size()),
                       row);
    }
    ds.epochs.push_back(std::move(ep));
  }
  if (ds.epochs.empty()) throw InvalidArgument("dataset file has no epochs: " + path);
  return ds;
}

Dataset load_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open dataset file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kBinMagic, 4) != 0) {
    throw ParseError("bad magic; not a PNET dataset file", 0);
  }
  std::uint16_t version = 0;
  std::uint32_t epoch_len = 0, count = 0;
  if (!read_raw(in, &version)) throw ParseError("truncated header", 0);
  if (version != kBinVersion) {
    throw ParseError("unsupported PNET version " + std::to_string(version), 0);
  }
  if (!read_raw(in, &epoch_len) || !read_raw(in, &count)) throw ParseError("truncated header", 0);
  if (epoch_len == 0) throw ParseError("epoch_len must be positive", 0);
  if (count == 0) throw InvalidArgument("dataset file has no epochs: " + path);

  Dataset ds;
  ds.epoch_len = static_cast<int>(epoch_len);
  ds.epochs.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    std::uint8_t label = 0;
    if (!read_raw(in, &label)) throw ParseError("truncated record", static_cast<long>(r + 1));
    if (label >= kNumClasses) {
      throw ParseError("label outside [0,4]: " + std::to_string(int(label)),
                       static_cast<long>(r + 1));
    }
    Epoch ep;
    ep.label = label;
    ep.samples.resize(epoch_len);
    in.read(reinterpret_cast<char*>(ep.samples.data()),
            static_cast<std::streamsize>(sizeof(double) * epoch_len));
    if (!in) throw ParseError("truncated record", static_cast<long>(r + 1));
    ds.epochs.push_back(std::move(ep));
  }
  return ds;
}

}  // namespace

void Dataset::recount() {
  class_counts.fill(0);
  for (const Epoch& ep : epochs) {
    if (ep.label < 0 || ep.label >= kNumClasses) {
      throw InvalidArgument("epoch label outside [0,4]");
    }
    ++class_counts[static_cast<std::size_t>(ep.label)];
  }
}

Dataset load_dataset(const std::string& path, FileFormat format, const LoadOptions& opts) {
  Dataset ds = format == FileFormat::kCsv ? load_csv(path) : load_bin(path);
  for (const Epoch& ep : ds.epochs) {
    if (static_cast<int>(ep.samples.size()) != ds.epoch_len) {
      throw InvalidArgument("inconsistent epoch length in dataset");
    }
  }
  if (opts.normalize) normalize_epochs(ds);
  ds.recount();
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path, FileFormat format) {
  if (ds.epochs.empty()) throw InvalidArgument("refusing to save an empty dataset");
  if (format == FileFormat::kCsv) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write dataset file: " + path);
    out << "label";
    for (int i = 0; i < ds.epoch_len; ++i) out << ",x" << i;
    out << "\n";
    char buf[32];
    for (const Epoch& ep : ds.epochs) {
      out << ep.label;
      for (double v : ep.samples) {
        // %.17g round-trips double exactly through strtod.
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << ',' << buf;
      }
      out << "\n";
    }
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write dataset file: " + path);
    out.write(kBinMagic, 4);
    write_raw(out, kBinVersion);
    write_raw(out, static_cast<std::uint32_t>(ds.epoch_len));
    write_raw(out, static_cast<std::uint32_t>(ds.epochs.size()));
    for (const Epoch& ep : ds.epochs) {
      write_raw(out, static_cast<std::uint8_t>(ep.label));
      out.write(reinterpret_cast<const char*>(ep.samples.data()),
                static_cast<std::streamsize>(sizeof(double) * ep.samples.size()));
    }
  }
}

SegmentBatch segment(const Epoch& epoch, int s_count) {
  const int len = static_cast<int>(epoch.samples.size());
  if (s_count < 1) throw InvalidArgument("segment: S_count must be >= 1");
  if (len % s_count != 0) {
    throw InvalidArgument("segment: S_count " + std::to_string(s_count) +
                          " does not divide epoch length " + std::to_string(len));
  }
  SegmentBatch batch;
  batch.s_count = s_count;
  batch.m_seg = len / s_count;
  batch.segments.resize(static_cast<std::size_t>(s_count));
  for (int s = 0; s < s_count; ++s) {
    const auto begin = epoch.samples.begin() + static_cast<std::ptrdiff_t>(s) * batch.m_seg;
    batch.segments[static_cast<std::size_t>(s)].assign(begin, begin + batch.m_seg);
  }
  return batch;
}

void normalize_epochs(Dataset& ds) {
  for (Epoch& ep : ds.epochs) zscore(ep.samples);
}

std::array<ClassRecipe, kNumClasses> SynthSpec::default_recipes() {
  // W: alpha-band, high amplitude. N1: theta. N2: spindle bursts over theta.
  // N3: delta, high amplitude. REM: low-amplitude theta plus a sawtooth.
  std::array<ClassRecipe, kNumClasses> r;
  WaveComponent w_alpha{8.0, 12.0, 2.0, false, false};
  WaveComponent n1_theta{4.0, 7.0, 1.0, false, false};
  WaveComponent n2_theta{4.0, 7.0, 1.0, false, false};
  WaveComponent n2_spindle{11.0, 16.0, 2.0, false, true};
  WaveComponent n3_delta{0.5, 2.0, 3.0, false, false};
  WaveComponent rem_theta{4.0, 7.0, 0.6, false, false};
  WaveComponent rem_saw{2.0, 3.0, 0.8, true, false};
  r[0].components = {w_alpha};
  r[1].components = {n1_theta};
  r[2].components = {n2_theta, n2_spindle};
  r[3].components = {n3_delta};
  r[4].components = {rem_theta, rem_saw};
  return r;
}

Dataset synthesize(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n_per_class < 1) throw InvalidArgument("synthesize: n_per_class must be >= 1");
  if (spec.noise_sigma < 0.0) throw InvalidArgument("synthesize: noise_sigma must be >= 0");
  if (spec.epoch_len < 2) throw InvalidArgument("synthesize: epoch_len must be >= 2");

  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const double duration_s = 30.0;
  const double fs = static_cast<double>(spec.epoch_len) / duration_s;

  Rng rng(seed);
  Dataset ds;
  ds.epoch_len = spec.epoch_len;
  for (int cls = 0; cls < kNumClasses; ++cls) {
    const ClassRecipe& recipe = spec.recipes[static_cast<std::size_t>(cls)];
    for (int i = 0; i < spec.n_per_class; ++i) {
      Epoch ep;
      ep.label = cls;
      ep.samples.assign(static_cast<std::size_t>(spec.epoch_len), 0.0);
      for (const WaveComponent& wc : recipe.components) {
        const double freq = rng.uniform(wc.freq_lo, wc.freq_hi);
        const double phase = rng.uniform(0.0, 1.0);
        // Burst components: short Gaussian envelopes at random positions,
        // echoing spindle trains.
        std::vector<double> centers;
        if (wc.burst) {
          for (int bi = 0; bi < wc.burst_count; ++bi) {
            centers.push_back(rng.uniform(0.05, 0.95) * duration_s);
          }
        }
        for (int t = 0; t < spec.epoch_len; ++t) {
          const double ts = static_cast<double>(t) / fs;
          const double cyc = freq * ts + phase;
          double w;
          if (wc.sawtooth) {
            w = 2.0 * (cyc - std::floor(cyc)) - 1.0;
          } else {
            w = std::sin(kTwoPi * cyc);
          }
          if (wc.burst) {
            double env = 0.0;
            for (double c0 : centers) {
              const double dd = (ts - c0) / wc.burst_sigma;
              env += std::exp(-0.5 * dd * dd);
            }
            w *= env;
          }
          ep.samples[static_cast<std::size_t>(t)] += wc.amplitude * w;
        }
      }
      if (spec.noise_sigma > 0.0) {
        for (double& v : ep.samples) v += rng.normal(0.0, spec.noise_sigma);
      }
      ds.epochs.push_back(std::move(ep));
    }
  }
  ds.recount();
  return ds;
}

}  // namespace pearnet
