#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fusenet {

/// Binary confusion counts with CP (label 1) as the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }

  /// Throws InvalidArgument on length mismatch or a value outside {0,1}.
  static ConfusionMatrix from_predictions(std::span<const int> predicted,
                                          std::span<const int> actual);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// (tp+tn)/total; throws EmptyMatrix when total is 0.
double accuracy(const ConfusionMatrix& cm);
/// tp/(tp+fn); throws NoPositives when tp+fn is 0.
double recall(const ConfusionMatrix& cm);
/// tp/(tp+fp); throws NoPredictedPositives when tp+fp is 0.
double precision(const ConfusionMatrix& cm);
/// Harmonic mean of precision and recall; throws UndefinedF1 when both are 0
/// (and propagates the precision/recall errors).
double f1(const ConfusionMatrix& cm);
double f1(double precision, double recall);

/// Metrics are fractions in [0,1]. A metric is absent when its denominator
/// is zero (computed reports) or when it was not claimed (claimed reports).
struct MetricsReport {
  std::string model_name;
  ConfusionMatrix source;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::vector<std::string> flags;

  /// Computes all four metrics from `cm`, leaving undefined ones absent.
  static MetricsReport from_counts(std::string name, const ConfusionMatrix& cm);
};

struct Discrepancy {
  std::string metric;               // "accuracy", "precision", "recall" or "f1"
  std::optional<double> computed;   // absent when undefined for the counts
  double claimed = 0.0;
  /// "accuracy:98.8300" (claimed value as a percentage).
  std::string flag() const;
};

/// Every claimed metric that differs from the value recomputed from `cm` by
/// more than `tol`, or that cannot be recomputed at all.
std::vector<Discrepancy> validate_report(const ConfusionMatrix& cm, const MetricsReport& claimed,
                                         double tol);

/// Fixed 4-decimal percentage, e.g. 0.975 -> "97.5000".
std::string format_percent(double fraction);

/// Lines `key=value` in the order model_name, tp, fp, tn, fn, accuracy,
/// precision, recall, f1, flags. Metrics are 4-decimal percentages or
/// "undefined"; flags are comma separated.
void write_report(std::ostream& out, const MetricsReport& report);
void save_report(const std::filesystem::path& path, const MetricsReport& report);
/// Throws MalformedReport on missing or unparsable fields.
MetricsReport read_report(std::istream& in);
MetricsReport load_report(const std::filesystem::path& path);

/// Rows ordered by accuracy descending, ties by model name; rows without an
/// accuracy sort last.
class ComparisonTable {
 public:
  void insert(MetricsReport report);
  const std::vector<MetricsReport>& rows() const { return rows_; }

  std::string to_text() const;
  std::string to_csv() const;

 private:
  std::vector<MetricsReport> rows_;
};

/// Throws InvalidArgument when `reports` is empty.
ComparisonTable compare(const std::vector<MetricsReport>& reports);

}  // namespace fusenet
