#include "mtg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "mtg/error.hpp"

namespace mtg {

double oracle_score(const Mask& r1, const Mask& o1) {
  const auto o = o1.count();
  if (o == 0) fail(ErrorCode::empty_input, "oracle: empty subject mask");
  if (!r1.subset_of(o1)) fail(ErrorCode::invariant, "oracle: region is not inside the subject mask");
  return 1.0 - static_cast<double>(r1.count()) / static_cast<double>(o);
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::dimension_mismatch, "correlation inputs differ in length");
  const auto n = x.size();
  if (n < 3) return {};
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), true};
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::dimension_mismatch, "correlation inputs differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double baseline_cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::dimension_mismatch, "embeddings differ in size");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) fail(ErrorCode::invariant, "cosine of a zero vector");
  return ab / std::sqrt(aa * bb);
}

std::vector<double> mean_pooled_embedding(const FeatureStack& stack) {
  std::vector<double> out;
  for (const auto& l : stack.layers) {
    std::vector<double> sum(l.channels, 0.0);
    for (std::size_t p = 0; p < l.positions(); ++p) {
      for (std::uint32_t c = 0; c < l.channels; ++c) sum[c] += l.values[p * l.channels + c];
    }
    for (auto& s : sum) out.push_back(s / static_cast<double>(l.positions()));
  }
  return out;
}

void MetricSeries::validate() const {
  if (ids.size() != scores.size()) fail(ErrorCode::invariant, "series '" + name + "': ids and scores differ in length");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) fail(ErrorCode::invariant, "series '" + name + "': duplicate id " + ids[i]);
    if (!std::isfinite(scores[i])) fail(ErrorCode::non_finite, "series '" + name + "': non-finite score for " + ids[i]);
  }
}

void OracleSeries::validate() const {
  MetricSeries{"oracle", ids, values}.validate();
  for (double v : values) {
    if (v < 0.0 || v > 1.0) fail(ErrorCode::invariant, "oracle values must lie in [0, 1]");
  }
}

CorrelationReport correlation_report(std::span<const MetricSeries> series, const OracleSeries& oracle) {
  oracle.validate();
  std::map<std::string, double> by_id;
  for (std::size_t i = 0; i < oracle.ids.size(); ++i) by_id[oracle.ids[i]] = oracle.values[i];
  CorrelationReport report;
  for (const auto& s : series) {
    s.validate();
    if (s.ids.size() != oracle.ids.size()) {
      fail(ErrorCode::integrity, "series '" + s.name + "' has " + std::to_string(s.ids.size()) + " ids, oracle has " +
                                     std::to_string(oracle.ids.size()));
    }
    std::vector<double> o;
    o.reserve(s.ids.size());
    for (const auto& id : s.ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) fail(ErrorCode::integrity, "series '" + s.name + "': id " + id + " has no oracle value");
      o.push_back(it->second);
    }
    report.rows.push_back({s.name, s.ids.size(), pearson(s.scores, o), spearman(s.scores, o)});
  }
  return report;
}

std::string CorrelationReport::to_text() const {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  auto fmt = [](const Correlation& c) {
    if (!c.defined) return std::string("       n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%10.4f", c.value);
    return std::string(buf);
  };
  std::ostringstream out;
  out << std::string(width - 6, ' ') << "metric" << "     n" << "   pearson" << "  spearman" << "\n";
  for (const auto& r : rows) {
    char n[16];
    std::snprintf(n, sizeof n, "%6zu", r.n);
    out << std::string(width - r.name.size(), ' ') << r.name << n << fmt(r.pearson) << fmt(r.spearman) << "\n";
  }
  return out.str();
}

nlohmann::json CorrelationReport::to_json() const {
  auto c = [](const Correlation& x) { return x.defined ? nlohmann::json(x.value) : nlohmann::json(nullptr); };
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) arr.push_back({{"metric", r.name}, {"n", r.n}, {"pearson", c(r.pearson)}, {"spearman", c(r.spearman)}});
  return {{"metrics", arr}};
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) fail(ErrorCode::invariant, "histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) return h;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  h.lo = *lo;
  h.hi = *hi;
  const double span = h.hi - h.lo;
  for (double v : values) {
    std::size_t b = 0;
    if (span > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((v - h.lo) / span * static_cast<double>(bins)));
    ++h.counts[b];
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin,lo,hi,count\n";
  const auto bins = h.counts.size();
  const double width = bins == 0 ? 0.0 : (h.hi - h.lo) / static_cast<double>(bins);
  char buf[128];
  for (std::size_t b = 0; b < bins; ++b) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%zu\n", b, h.lo + width * static_cast<double>(b),
                  b + 1 == bins ? h.hi : h.lo + width * static_cast<double>(b + 1), h.counts[b]);
    out += buf;
  }
  return out;
}

MetricSeries read_scores_csv(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  MetricSeries s;
  s.name = std::move(name);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorCode::invariant, path.string() + ":" + std::to_string(line_no) + ": expected sample_id,score");
    const auto id = line.substr(0, comma);
    const auto value = line.substr(comma + 1);
    if (line_no == 1 && id == "sample_id") continue;
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument("trailing characters");
      s.ids.push_back(id);
      s.scores.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorCode::invariant, path.string() + ":" + std::to_string(line_no) + ": bad score '" + value + "'");
    }
  }
  s.validate();
  return s;
}

void write_scores_csv(const MetricSeries& series, const std::filesystem::path& path) {
  series.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  out << "sample_id,score\n";
  char buf[64];
  for (std::size_t i = 0; i < series.ids.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", series.scores[i]);
    out << series.ids[i] << "," << buf << "\n";
  }
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

std::vector<double> read_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto first = cell.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      try {
        out.push_back(std::stod(cell.substr(first)));
      } catch (const std::exception&) {
        fail(ErrorCode::invariant, path.string() + ": bad embedding value '" + cell + "'");
      }
    }
  }
  if (out.empty()) fail(ErrorCode::empty_input, path.string() + ": empty embedding");
  return out;
}

}  // namespace mtg
