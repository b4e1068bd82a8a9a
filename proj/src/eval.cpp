#include "dcn2/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dcn2/errors.hpp"

namespace dcn2 {

namespace {

void require_same_length(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("scores.len " + std::to_string(scores.size()) + " != labels.len " +
                     std::to_string(labels.size()));
  }
}

double bce(double p, int y) { return y ? -std::log(p) : -std::log1p(-p); }

}  // namespace

double AucCounts::value() const {
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

AucCounts auc_counts(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  AucCounts c;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]]) ++pos;
      else ++neg;
      ++j;
    }
    // each positive beats every negative scored strictly lower, ties are half
    c.twice_u += 2 * pos * c.negatives + pos * neg;
    c.positives += pos;
    c.negatives += neg;
    i = j;
  }
  return c;
}

std::optional<double> window_auc(std::span<const double> scores, std::span<const int> labels) {
  const auto c = auc_counts(scores, labels);
  if (!c.defined()) return std::nullopt;
  return c.value();
}

double window_logloss(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores, labels);
  if (scores.empty()) throw EvaluationError("logloss of an empty window");
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) sum += bce(scores[i], labels[i]);
  return sum / static_cast<double>(scores.size());
}

std::optional<double> window_rig(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores, labels);
  if (scores.empty()) return std::nullopt;
  std::size_t pos = 0;
  for (int y : labels) pos += y ? 1 : 0;
  if (pos == 0 || pos == labels.size()) return std::nullopt;
  const double q = static_cast<double>(pos) / static_cast<double>(labels.size());
  const double baseline = -(q * std::log(q) + (1.0 - q) * std::log1p(-q));
  return 1.0 - window_logloss(scores, labels) / baseline;
}

WindowRecord score_window(std::size_t index, std::span<const double> scores,
                          std::span<const int> labels) {
  WindowRecord w;
  w.index = index;
  w.count = scores.size();
  for (int y : labels) w.positives += y ? 1 : 0;
  w.auc = window_auc(scores, labels);
  w.logloss = window_logloss(scores, labels);
  w.rig = window_rig(scores, labels);
  w.pos_rate = static_cast<double>(w.positives) / static_cast<double>(w.count);
  return w;
}

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw EvaluationError("aggregate: no defined windows");
  Aggregate a;
  a.count = values.size();
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  a.min = sorted.front();
  a.max = sorted.back();
  const std::size_t n = sorted.size();
  a.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  // summing in sorted order keeps the result independent of window order
  double sum = 0.0;
  for (double v : sorted) sum += v;
  a.avg = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double v : sorted) sq += (v - a.avg) * (v - a.avg);
  a.std = std::sqrt(sq / static_cast<double>(n));
  return a;
}

WindowedMetrics::WindowedMetrics(std::size_t window_size) : window_size_(window_size) {
  if (window_size == 0) throw ConfigError("window size must be >= 1");
  scores_.reserve(window_size);
  labels_.reserve(window_size);
}

void WindowedMetrics::record(double prediction, int label) {
  if (!(prediction > 0.0 && prediction < 1.0)) {
    throw EvaluationError("prediction " + std::to_string(prediction) +
                          " outside (0, 1) at instance " + std::to_string(instances_));
  }
  scores_.push_back(prediction);
  labels_.push_back(label ? 1 : 0);
  ++instances_;
  if (scores_.size() == window_size_) {
    windows_.push_back(score_window(windows_.size(), scores_, labels_));
    scores_.clear();
    labels_.clear();
  }
}

std::optional<WindowRecord> WindowedMetrics::partial() const {
  if (scores_.empty()) return std::nullopt;
  return score_window(windows_.size(), scores_, labels_);
}

std::vector<double> WindowedMetrics::auc_series() const {
  std::vector<double> out;
  for (const auto& w : windows_)
    if (w.auc) out.push_back(*w.auc);
  return out;
}

std::vector<double> WindowedMetrics::logloss_series() const {
  std::vector<double> out;
  for (const auto& w : windows_) out.push_back(w.logloss);
  return out;
}

std::vector<double> WindowedMetrics::rig_series() const {
  std::vector<double> out;
  for (const auto& w : windows_)
    if (w.rig) out.push_back(*w.rig);
  return out;
}

MetricAggregates aggregate_windows(const std::vector<WindowRecord>& windows) {
  std::vector<double> auc, ll, rig, pr;
  for (const auto& w : windows) {
    if (w.auc) auc.push_back(*w.auc);
    if (w.rig) rig.push_back(*w.rig);
    ll.push_back(w.logloss);
    pr.push_back(w.pos_rate);
  }
  MetricAggregates m;
  if (!auc.empty()) m.auc = aggregate(auc);
  if (!ll.empty()) m.logloss = aggregate(ll);
  if (!rig.empty()) m.rig = aggregate(rig);
  if (!pr.empty()) m.pos_rate = aggregate(pr);
  return m;
}

MetricAggregates WindowedMetrics::aggregates() const {
  auto m = aggregate_windows(windows_);
  if (!m.auc) throw EvaluationError("aggregate: no complete window with a defined AUC");
  return m;
}

std::string format_metric(std::optional<double> v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.8f", *v);
  return buf;
}

void write_window_csv_header(std::ostream& out, const std::string& comment) {
  out << "# " << comment << '\n';
  out << "run_id,window_index,auc,logloss,rig,pos_rate\n";
}

void write_window_rows(std::ostream& out, const std::string& run_id,
                       const std::vector<WindowRecord>& windows) {
  for (const auto& w : windows) {
    out << run_id << ',' << w.index << ',' << format_metric(w.auc) << ','
        << format_metric(w.logloss) << ',' << format_metric(w.rig) << ','
        << format_metric(w.pos_rate) << '\n';
  }
}

}  // namespace dcn2
