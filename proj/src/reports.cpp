#include "retro/reports.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace retro {

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::uint32_t> predictions,
                                                       std::span<const std::uint32_t> gold, std::size_t num_classes) {
  if (predictions.size() != gold.size()) throw std::invalid_argument("confusion_matrix: size mismatch");
  std::vector<std::vector<std::size_t>> counts(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= num_classes || predictions[i] >= num_classes) {
      throw std::out_of_range("confusion_matrix: label out of range at " + std::to_string(i));
    }
    ++counts[gold[i]][predictions[i]];
  }
  return counts;
}

ClassificationMetrics compute_metrics(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> gold,
                                      std::size_t num_classes, std::optional<std::uint32_t> negative_label) {
  if (gold.empty()) throw std::invalid_argument("compute_metrics: empty evaluation set");
  const auto cm = confusion_matrix(predictions, gold, num_classes);
  std::size_t correct = 0;
  for (std::size_t c = 0; c < num_classes; ++c) correct += cm[c][c];

  ClassificationMetrics m;
  m.count = gold.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
  if (!negative_label) {
    m.micro_f1 = m.accuracy;
    return m;
  }
  std::size_t tp = 0, predicted = 0, actual = 0;
  for (std::size_t g = 0; g < num_classes; ++g) {
    for (std::size_t p = 0; p < num_classes; ++p) {
      if (p != *negative_label) predicted += cm[g][p];
      if (g != *negative_label) actual += cm[g][p];
    }
    if (g != *negative_label) tp += cm[g][g];
  }
  const double precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  const double recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
  m.micro_f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std: no values");
  MeanStd out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

MetricsReport MetricsReport::aggregate(std::span<const std::uint64_t> seeds,
                                       std::span<const ClassificationMetrics> per_seed) {
  if (seeds.size() != per_seed.size()) throw std::invalid_argument("MetricsReport: seeds and results differ in length");
  MetricsReport r;
  r.seeds.assign(seeds.begin(), seeds.end());
  for (const auto& m : per_seed) {
    r.accuracy.push_back(m.accuracy);
    r.micro_f1.push_back(m.micro_f1);
  }
  r.accuracy_summary = mean_std(r.accuracy);
  r.micro_f1_summary = mean_std(r.micro_f1);
  return r;
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_number: conversion failed");
  return std::string(buf, ptr);
}

namespace {

std::string fmt_opt(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

}  // namespace

void write_metrics_tsv(const MetricsReport& report, std::ostream& out) {
  out << "metric\tmean\tstd\n";
  out << "accuracy\t" << format_number(report.accuracy_summary.mean) << '\t' << fmt_opt(report.accuracy_summary.stddev)
      << '\n';
  out << "micro_f1\t" << format_number(report.micro_f1_summary.mean) << '\t' << fmt_opt(report.micro_f1_summary.stddev)
      << '\n';
}

void write_per_seed_tsv(const MetricsReport& report, std::ostream& out) {
  out << "seed\taccuracy\tmicro_f1\n";
  for (std::size_t i = 0; i < report.seeds.size(); ++i) {
    out << report.seeds[i] << '\t' << format_number(report.accuracy[i]) << '\t' << format_number(report.micro_f1[i])
        << '\n';
  }
}

void write_plot_tsv(std::span<const PlotPoint> points, std::ostream& out) {
  out << "x\tmean\tstd\n";
  for (const auto& p : points) out << format_number(p.x) << '\t' << format_number(p.y.mean) << '\t' << fmt_opt(p.y.stddev) << '\n';
}

}  // namespace retro
