#include "pearnet/metrics.hpp"

#include <cstdio>

namespace pearnet {

MetricsReport MetricsReport::from_confusion(const Confusion& c) {
  MetricsReport r;
  r.confusion = c;
  long trace = 0;
  std::array<long, kNumClasses> row_sum{}, col_sum{};
  for (int i = 0; i < kNumClasses; ++i) {
    for (int j = 0; j < kNumClasses; ++j) {
      r.total += c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      row_sum[static_cast<std::size_t>(i)] += c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      col_sum[static_cast<std::size_t>(j)] += c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    trace += c[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  }
  r.accuracy = r.total > 0 ? static_cast<double>(trace) / static_cast<double>(r.total) : 0.0;
  double f1_sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    const long tp = c[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)];
    const double precision = col_sum[static_cast<std::size_t>(k)] > 0
                                 ? static_cast<double>(tp) / static_cast<double>(col_sum[static_cast<std::size_t>(k)])
                                 : 0.0;
    const double recall = row_sum[static_cast<std::size_t>(k)] > 0
                              ? static_cast<double>(tp) / static_cast<double>(row_sum[static_cast<std::size_t>(k)])
                              : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    r.per_class_f1[static_cast<std::size_t>(k)] = f1;
    f1_sum += f1;
  }
  r.macro_f1 = f1_sum / kNumClasses;
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["macro_f1"] = macro_f1;
  nlohmann::json f1;
  for (int k = 0; k < kNumClasses; ++k) {
    f1[kStageNames[static_cast<std::size_t>(k)]] = per_class_f1[static_cast<std::size_t>(k)];
  }
  j["per_class_f1"] = f1;
  j["total"] = total;
  nlohmann::json conf = nlohmann::json::array();
  for (const auto& row : confusion) {
    conf.push_back(std::vector<long>(row.begin(), row.end()));
  }
  j["confusion"] = conf;
  return j;
}

std::string MetricsReport::table_header() {
  return "Method                                            Accuracy     MF1       W      N1      N2      N3     REM\n";
}

std::string MetricsReport::table_row(const std::string& row_label) const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-48s %9.3f %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f\n",
                row_label.c_str(), accuracy, macro_f1, per_class_f1[0], per_class_f1[1],
                per_class_f1[2], per_class_f1[3], per_class_f1[4]);
  return buf;
}

}  // namespace pearnet
