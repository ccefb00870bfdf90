#pragma once

#include <array>
#include <string>

#include "json.hpp"
#include "pearnet/signal.hpp"

namespace pearnet {

using Confusion = std::array<std::array<long, kNumClasses>, kNumClasses>;  // [truth][pred]

// Accuracy, macro-F1 and per-class F1 derived from a 5x5 confusion matrix.
// Per-class F1 uses the zero-division -> 0 convention.
struct MetricsReport {
  Confusion confusion{};
  long total = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kNumClasses> per_class_f1{};

  static MetricsReport from_confusion(const Confusion& c);

  nlohmann::json to_json() const;
  // Aligned text with Accuracy, MF1 and per-stage F1 columns.
  static std::string table_header();
  std::string table_row(const std::string& row_label) const;
  std::string to_table(const std::string& row_label) const {
    return table_header() + table_row(row_label);
  }
};

inline constexpr std::array<const char*, kNumClasses> kStageNames = {"W", "N1", "N2", "N3", "REM"};

}  // namespace pearnet
