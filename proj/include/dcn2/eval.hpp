#pragma once

// Progressive (test-then-train) evaluation over fixed-size windows.

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dcn2 {

inline constexpr std::size_t kDefaultWindow = 20000;

// AUC as an exact fraction: twice the Mann-Whitney U (ties count one half,
// so doubling keeps it an integer) over 2 * P * N.
struct AucCounts {
  std::uint64_t twice_u = 0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  bool defined() const { return positives > 0 && negatives > 0; }
  double value() const;
};

AucCounts auc_counts(std::span<const double> scores, std::span<const int> labels);
// nullopt for a single-class window.
std::optional<double> window_auc(std::span<const double> scores, std::span<const int> labels);
double window_logloss(std::span<const double> scores, std::span<const int> labels);
// 1 - LL / LL_baserate with the window's own base rate; nullopt when the
// base rate is 0 or 1.
std::optional<double> window_rig(std::span<const double> scores, std::span<const int> labels);

struct WindowRecord {
  std::size_t index = 0;
  std::size_t count = 0;
  std::size_t positives = 0;
  std::optional<double> auc;
  double logloss = 0.0;
  std::optional<double> rig;
  double pos_rate = 0.0;
};

WindowRecord score_window(std::size_t index, std::span<const double> scores,
                          std::span<const int> labels);

struct Aggregate {
  double avg = 0.0;
  double median = 0.0;
  double max = 0.0;
  double min = 0.0;
  double std = 0.0;  // population
  std::size_t count = 0;
};

// Throws EvaluationError on an empty series.
Aggregate aggregate(std::span<const double> values);

struct MetricAggregates {
  std::optional<Aggregate> auc;
  std::optional<Aggregate> logloss;
  std::optional<Aggregate> rig;
  std::optional<Aggregate> pos_rate;
};

class WindowedMetrics {
 public:
  explicit WindowedMetrics(std::size_t window_size = kDefaultWindow);

  // `prediction` must lie strictly inside (0, 1).
  void record(double prediction, int label);

  std::size_t window_size() const { return window_size_; }
  std::size_t instances() const { return instances_; }
  const std::vector<WindowRecord>& windows() const { return windows_; }
  // The trailing window that did not fill up, if any.
  std::optional<WindowRecord> partial() const;

  // Per-metric series over defined windows.
  std::vector<double> auc_series() const;
  std::vector<double> logloss_series() const;
  std::vector<double> rig_series() const;

  // Throws EvaluationError when no complete window has a defined AUC.
  MetricAggregates aggregates() const;

 private:
  std::size_t window_size_;
  std::size_t instances_ = 0;
  std::vector<double> scores_;
  std::vector<int> labels_;
  std::vector<WindowRecord> windows_;
};

// Aggregates over whatever windows are defined; metrics with none stay empty.
MetricAggregates aggregate_windows(const std::vector<WindowRecord>& windows);

// "NA" for an undefined value, otherwise fixed 8-decimal text.
std::string format_metric(std::optional<double> v);

void write_window_csv_header(std::ostream& out, const std::string& comment);
void write_window_rows(std::ostream& out, const std::string& run_id,
                       const std::vector<WindowRecord>& windows);

}  // namespace dcn2
