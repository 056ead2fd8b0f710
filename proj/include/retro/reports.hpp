#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace retro {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  std::size_t count = 0;
};

// counts[gold][pred]
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::uint32_t> predictions,
                                                       std::span<const std::uint32_t> gold, std::size_t num_classes);

// Micro-F1 over the non-negative classes when `negative_label` is set; without
// one every class counts and micro-F1 equals accuracy.
ClassificationMetrics compute_metrics(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> gold,
                                      std::size_t num_classes, std::optional<std::uint32_t> negative_label = {});

struct MeanStd {
  double mean = 0.0;
  std::optional<double> stddev;  // sample std, absent below two values
};

MeanStd mean_std(std::span<const double> values);

struct MetricsReport {
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracy;
  std::vector<double> micro_f1;
  MeanStd accuracy_summary;
  MeanStd micro_f1_summary;

  static MetricsReport aggregate(std::span<const std::uint64_t> seeds, std::span<const ClassificationMetrics> per_seed);
};

// Shortest representation that parses back to the same double.
std::string format_number(double v);

// metric<TAB>mean<TAB>std ("NA" when absent)
void write_metrics_tsv(const MetricsReport& report, std::ostream& out);
// seed<TAB>accuracy<TAB>micro_f1
void write_per_seed_tsv(const MetricsReport& report, std::ostream& out);

struct PlotPoint {
  double x = 0.0;
  MeanStd y;
};

// x<TAB>mean<TAB>std
void write_plot_tsv(std::span<const PlotPoint> points, std::ostream& out);

}  // namespace retro
