#include "dmix/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

namespace dmix {

ResultMatrix::ResultMatrix(std::size_t tasks) {
  if (tasks == 0) throw MetricsError("result matrix: needs at least one task");
  cells_.resize(tasks);
  for (std::size_t t = 0; t < tasks; ++t) cells_[t].resize(t + 1);
}

void ResultMatrix::record(std::size_t t, std::size_t i, double acc) {
  if (t >= tasks()) throw MetricsError("record: checkpoint " + std::to_string(t) + " out of range");
  if (i > t) throw MetricsError("record: task " + std::to_string(i) + " is above the diagonal at checkpoint " + std::to_string(t));
  if (!(acc >= 0.0 && acc <= 1.0)) throw MetricsError("record: accuracy must lie in [0, 1]");
  if (cells_[t][i]) throw MetricsError("record: cell (" + std::to_string(t) + ", " + std::to_string(i) + ") already written");
  cells_[t][i] = acc;
}

bool ResultMatrix::has(std::size_t t, std::size_t i) const {
  return t < tasks() && i <= t && cells_[t][i].has_value();
}

double ResultMatrix::at(std::size_t t, std::size_t i) const {
  if (!has(t, i)) throw MetricsError("result matrix: cell (" + std::to_string(t) + ", " + std::to_string(i) + ") is empty");
  return *cells_[t][i];
}

std::string ResultMatrix::to_csv() const {
  std::ostringstream out;
  out << "checkpoint";
  for (std::size_t i = 0; i < tasks(); ++i) out << ",task_" << i;
  out << '\n';
  for (std::size_t t = 0; t < tasks(); ++t) {
    out << t;
    for (std::size_t i = 0; i < tasks(); ++i) {
      out << ',';
      if (has(t, i)) out << percent(at(t, i));
    }
    out << '\n';
  }
  return out.str();
}

double avg_accuracy(const ResultMatrix& r) {
  const std::size_t last = r.tasks() - 1;
  double sum = 0.0;
  for (std::size_t i = 0; i <= last; ++i) {
    if (!r.has(last, i)) throw MetricsError("avg_accuracy: final row is incomplete");
    sum += r.at(last, i);
  }
  return sum / static_cast<double>(r.tasks());
}

double avg_forgetting(const ResultMatrix& r) {
  const std::size_t last = r.tasks() - 1;
  double sum = 0.0;
  for (std::size_t i = 0; i <= last; ++i) {
    if (!r.has(last, i)) throw MetricsError("avg_forgetting: final row is incomplete");
    if (!r.has(i, i)) throw MetricsError("avg_forgetting: diagonal is incomplete");
    sum += r.at(i, i) - r.at(last, i);
  }
  return sum / static_cast<double>(r.tasks());
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) throw MetricsError("mean_of: empty row");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

}  // namespace dmix
