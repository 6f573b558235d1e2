#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtg/feature_store.hpp"

namespace mtg {

/// 1 - |R1| / |O1|. Throws on an empty O1 or when R1 is not inside O1.
double oracle_score(const Mask& r1, const Mask& o1);

struct Correlation {
  double value = 0.0;
  bool defined = false;  // false for n < 3 or a constant series
};

Correlation pearson(std::span<const double> x, std::span<const double> y);
/// Pearson on average ranks.
Correlation spearman(std::span<const double> x, std::span<const double> y);
/// 1-based ranks; ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

/// Cosine of two embeddings; throws on unequal sizes or a zero vector.
double baseline_cosine(std::span<const double> a, std::span<const double> b);

/// Per-layer channel means over all positions, concatenated in layer order.
std::vector<double> mean_pooled_embedding(const FeatureStack& stack);

struct MetricSeries {
  std::string name;
  std::vector<std::string> ids;
  std::vector<double> scores;

  /// Equal lengths, unique ids, finite scores.
  void validate() const;
};

/// Oracle values share the MetricSeries layout; values must lie in [0, 1].
struct OracleSeries {
  std::vector<std::string> ids;
  std::vector<double> values;

  void validate() const;
};

struct CorrelationRow {
  std::string name;
  std::size_t n = 0;
  Correlation pearson;
  Correlation spearman;
};

struct CorrelationReport {
  std::vector<CorrelationRow> rows;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// Every series must list exactly the oracle's ids, in any order.
CorrelationReport correlation_report(std::span<const MetricSeries> series, const OracleSeries& oracle);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

/// Fixed-width bins over [min, max]; the maximum falls in the last bin.
Histogram histogram(std::span<const double> values, std::size_t bins = 20);
/// bin,lo,hi,count
std::string histogram_csv(const Histogram& h);

/// Two-column CSV with header sample_id,score.
MetricSeries read_scores_csv(const std::filesystem::path& path, std::string name);
void write_scores_csv(const MetricSeries& series, const std::filesystem::path& path);

/// Comma-separated floats on one or more lines.
std::vector<double> read_embedding_csv(const std::filesystem::path& path);

}  // namespace mtg
