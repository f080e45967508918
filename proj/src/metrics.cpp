#include "fusenet/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fusenet/error.hpp"

namespace fusenet {

namespace {

template <typename Compute>
std::optional<double> defined(Compute compute, const ConfusionMatrix& cm) {
  try {
    return compute(cm);
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::string metric_text(const std::optional<double>& v) {
  return v ? format_percent(*v) : "undefined";
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  return s.substr(begin, s.find_last_not_of(" \t\r") - begin + 1);
}

std::size_t parse_count(const std::map<std::string, std::string>& fields, const std::string& key) {
  auto it = fields.find(key);
  if (it == fields.end()) throw MalformedReport("missing field '" + key + "'");
  std::size_t v = 0;
  const std::string& text = it->second;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    throw MalformedReport("field '" + key + "' is not a count: '" + text + "'");
  }
  return v;
}

std::optional<double> parse_metric(const std::map<std::string, std::string>& fields,
                                   const std::string& key) {
  auto it = fields.find(key);
  if (it == fields.end()) throw MalformedReport("missing field '" + key + "'");
  const std::string& text = it->second;
  if (text == "undefined") return std::nullopt;
  double v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty() || v < 0 || v > 100) {
    throw MalformedReport("field '" + key + "' is not a percentage: '" + text + "'");
  }
  return v / 100.0;
}

bool row_before(const MetricsReport& a, const MetricsReport& b) {
  if (a.accuracy.has_value() != b.accuracy.has_value()) return a.accuracy.has_value();
  if (a.accuracy && *a.accuracy != *b.accuracy) return *a.accuracy > *b.accuracy;
  return a.model_name < b.model_name;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const int> predicted,
                                                  std::span<const int> actual) {
  if (predicted.size() != actual.size()) {
    throw InvalidArgument("predictions and labels differ in length");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int p = predicted[i], a = actual[i];
    if ((p != 0 && p != 1) || (a != 0 && a != 1)) {
      throw InvalidArgument("labels must be 0 or 1");
    }
    if (p == 1) {
      ++(a == 1 ? cm.tp : cm.fp);
    } else {
      ++(a == 0 ? cm.tn : cm.fn);
    }
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw EmptyMatrix("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

double recall(const ConfusionMatrix& cm) {
  if (cm.tp + cm.fn == 0) throw NoPositives("recall needs at least one actual positive");
  return static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
}

double precision(const ConfusionMatrix& cm) {
  if (cm.tp + cm.fp == 0) {
    throw NoPredictedPositives("precision needs at least one predicted positive");
  }
  return static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
}

double f1(double p, double r) {
  if (p + r == 0.0) throw UndefinedF1("precision and recall are both zero");
  return 2.0 * p * r / (p + r);
}

double f1(const ConfusionMatrix& cm) { return f1(precision(cm), recall(cm)); }

MetricsReport MetricsReport::from_counts(std::string name, const ConfusionMatrix& cm) {
  MetricsReport r;
  r.model_name = std::move(name);
  r.source = cm;
  r.accuracy = defined([](const auto& m) { return fusenet::accuracy(m); }, cm);
  r.precision = defined([](const auto& m) { return fusenet::precision(m); }, cm);
  r.recall = defined([](const auto& m) { return fusenet::recall(m); }, cm);
  r.f1 = defined([](const auto& m) { return fusenet::f1(m); }, cm);
  return r;
}

std::string Discrepancy::flag() const { return metric + ":" + format_percent(claimed); }

std::vector<Discrepancy> validate_report(const ConfusionMatrix& cm, const MetricsReport& claimed,
                                         double tol) {
  const MetricsReport computed = MetricsReport::from_counts(claimed.model_name, cm);
  const std::pair<const char*, std::pair<std::optional<double>, std::optional<double>>> pairs[] = {
      {"accuracy", {computed.accuracy, claimed.accuracy}},
      {"precision", {computed.precision, claimed.precision}},
      {"recall", {computed.recall, claimed.recall}},
      {"f1", {computed.f1, claimed.f1}}};
  std::vector<Discrepancy> out;
  for (const auto& [name, values] : pairs) {
    const auto& [mine, theirs] = values;
    if (!theirs) continue;
    if (!mine || std::abs(*mine - *theirs) > tol) out.push_back({name, mine, *theirs});
  }
  return out;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", fraction * 100.0);
  return buf;
}

void write_report(std::ostream& out, const MetricsReport& r) {
  out << "model_name=" << r.model_name << '\n'
      << "tp=" << r.source.tp << '\n'
      << "fp=" << r.source.fp << '\n'
      << "tn=" << r.source.tn << '\n'
      << "fn=" << r.source.fn << '\n'
      << "accuracy=" << metric_text(r.accuracy) << '\n'
      << "precision=" << metric_text(r.precision) << '\n'
      << "recall=" << metric_text(r.recall) << '\n'
      << "f1=" << metric_text(r.f1) << '\n'
      << "flags=" << join(r.flags, ',') << '\n';
}

void save_report(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  write_report(out, report);
}

MetricsReport read_report(std::istream& in) {
  std::map<std::string, std::string> fields;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw MalformedReport("line without '=': " + line);
    fields[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  MetricsReport r;
  auto name = fields.find("model_name");
  if (name == fields.end() || name->second.empty()) throw MalformedReport("missing model_name");
  r.model_name = name->second;
  r.source = {parse_count(fields, "tp"), parse_count(fields, "fp"), parse_count(fields, "tn"),
              parse_count(fields, "fn")};
  r.accuracy = parse_metric(fields, "accuracy");
  r.precision = parse_metric(fields, "precision");
  r.recall = parse_metric(fields, "recall");
  r.f1 = parse_metric(fields, "f1");
  if (auto flags = fields.find("flags"); flags != fields.end()) {
    std::istringstream list(flags->second);
    std::string item;
    while (std::getline(list, item, ',')) {
      if (!trim(item).empty()) r.flags.push_back(trim(item));
    }
  } else {
    throw MalformedReport("missing field 'flags'");
  }
  return r;
}

MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  return read_report(in);
}

void ComparisonTable::insert(MetricsReport report) {
  auto pos = std::upper_bound(rows_.begin(), rows_.end(), report, row_before);
  rows_.insert(pos, std::move(report));
}

std::string ComparisonTable::to_text() const {
  const std::vector<std::string> header{"model", "TP", "FP", "TN", "FN",
                                        "accuracy", "precision", "recall", "f1", "flags"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& r : rows_) {
    cells.push_back({r.model_name, std::to_string(r.source.tp), std::to_string(r.source.fp),
                     std::to_string(r.source.tn), std::to_string(r.source.fn),
                     metric_text(r.accuracy), metric_text(r.precision), metric_text(r.recall),
                     metric_text(r.f1), r.flags.empty() ? "-" : join(r.flags, ',')});
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());

  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      // Name and flags columns are left aligned, numbers right aligned.
      const bool last = c + 1 == row.size();
      const std::string pad(widths[c] - row[c].size(), ' ');
      if (last) {
        out << row[c] << '\n';
      } else {
        out << (c == 0 ? row[c] + pad : pad + row[c]) << "  ";
      }
    }
  }
  return out.str();
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream out;
  out << "model_name,tp,fp,tn,fn,accuracy,precision,recall,f1,flags\n";
  for (const auto& r : rows_) {
    out << r.model_name << ',' << r.source.tp << ',' << r.source.fp << ',' << r.source.tn << ','
        << r.source.fn << ',' << metric_text(r.accuracy) << ',' << metric_text(r.precision) << ','
        << metric_text(r.recall) << ',' << metric_text(r.f1) << ',' << join(r.flags, ';') << '\n';
  }
  return out.str();
}

ComparisonTable compare(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw InvalidArgument("compare needs at least one report");
  ComparisonTable table;
  for (const auto& r : reports) table.insert(r);
  return table;
}

}  // namespace fusenet
