#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmix {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Lower-triangular accuracy bookkeeping: at(t, i) is the accuracy on task i
// after training task t, for i <= t. Values are fractions in [0, 1].
class ResultMatrix {
 public:
  explicit ResultMatrix(std::size_t tasks);

  std::size_t tasks() const { return cells_.size(); }
  // Writes a cell once. Throws MetricsError when i > t, the cell is already
  // written, an index is out of range or acc lies outside [0, 1].
  void record(std::size_t t, std::size_t i, double acc);
  bool has(std::size_t t, std::size_t i) const;
  double at(std::size_t t, std::size_t i) const;

  // One line per checkpoint, one column per task; cells above the diagonal
  // are left empty. Values are percentages with two decimals.
  std::string to_csv() const;

 private:
  std::vector<std::vector<std::optional<double>>> cells_;
};

// Mean of the final row. Throws MetricsError when that row is incomplete.
double avg_accuracy(const ResultMatrix& r);
// Mean over tasks of at(i, i) - at(T, i). Throws MetricsError when the final
// row or the diagonal is incomplete.
double avg_forgetting(const ResultMatrix& r);

// Mean of a row of accuracies already in percent (for reference rows).
double mean_of(const std::vector<double>& values);

// Two-decimal percentage text for a fraction.
std::string percent(double fraction);

}  // namespace dmix
