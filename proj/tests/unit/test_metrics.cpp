#include <doctest.h>

#include "dmix/metrics.hpp"
#include "dmix/rng.hpp"

using namespace dmix;

namespace {

ResultMatrix filled(const std::vector<std::vector<double>>& rows) {
  ResultMatrix r(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t i = 0; i <= t; ++i) r.record(t, i, rows[t][i]);
  return r;
}

ResultMatrix random_matrix(Rng& rng, std::size_t tasks, double lo, double hi) {
  ResultMatrix r(tasks);
  for (std::size_t t = 0; t < tasks; ++t)
    for (std::size_t i = 0; i <= t; ++i) r.record(t, i, rng.uniform(lo, hi));
  return r;
}

}  // namespace

TEST_CASE("record writes once and respects the triangle") {
  ResultMatrix r(3);
  r.record(0, 0, 0.8);
  CHECK(r.at(0, 0) == 0.8);
  CHECK_THROWS_AS(r.record(0, 1, 0.5), MetricsError);
  CHECK_THROWS_AS(r.record(0, 0, 0.7), MetricsError);
  CHECK_THROWS_AS(r.record(1, 0, 1.5), MetricsError);
  CHECK_THROWS_AS(r.record(3, 0, 0.5), MetricsError);
  CHECK_THROWS_AS(r.at(1, 1), MetricsError);
  CHECK_THROWS_AS(ResultMatrix(0), MetricsError);
}

TEST_CASE("avg_accuracy examples") {
  CHECK(avg_accuracy(filled({{0.42}})) == 0.42);
  CHECK(avg_accuracy(filled({{0.9}, {0.1, 0.6}, {0.6, 0.6, 0.6}})) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(mean_of({81.00, 76.85, 67.87, 69.38, 66.52}) == doctest::Approx(72.32).epsilon(0.01 / 72.32));
  CHECK(mean_of({85.00, 70.00, 72.10, 69.40, 68.82}) == doctest::Approx(73.06).epsilon(0.01 / 73.06));
  ResultMatrix partial(2);
  partial.record(0, 0, 0.5);
  partial.record(1, 1, 0.5);
  CHECK_THROWS_AS(avg_accuracy(partial), MetricsError);
}

TEST_CASE("avg_forgetting examples") {
  CHECK(avg_forgetting(filled({{0.7}, {0.7, 0.7}, {0.7, 0.7, 0.7}})) == 0.0);
  CHECK(avg_forgetting(filled({{0.3}})) == 0.0);
  const double f = avg_forgetting(filled({{0.80}, {0.50, 0.60}, {0.50, 0.40, 0.90}}));
  CHECK(f == doctest::Approx(0.1667).epsilon(1e-4 / 0.1667));
  CHECK(avg_forgetting(filled({{0.2}, {0.9, 0.5}})) < 0.0);
  ResultMatrix no_diag(2);
  no_diag.record(1, 0, 0.5);
  no_diag.record(1, 1, 0.5);
  CHECK_THROWS_AS(avg_forgetting(no_diag), MetricsError);
}

TEST_CASE("forgetting is non-negative when columns never rise") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.index(6);
    ResultMatrix r(n);
    for (std::size_t i = 0; i < n; ++i) {
      double v = rng.uniform();
      for (std::size_t t = i; t < n; ++t) {
        r.record(t, i, v);
        v *= rng.uniform();
      }
    }
    CHECK(avg_forgetting(r) >= 0.0);
  }
}

TEST_CASE("metrics scale with the matrix and forgetting ignores shifts") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.index(6);
    const ResultMatrix base = random_matrix(rng, n, 0.0, 0.5);
    const double c = rng.uniform(0.01, 1.0);
    const double shift = rng.uniform(0.0, 0.5);
    ResultMatrix scaled(n), shifted(n);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i <= t; ++i) {
        scaled.record(t, i, c * base.at(t, i));
        shifted.record(t, i, base.at(t, i) + shift);
      }
    CHECK(avg_accuracy(scaled) == doctest::Approx(c * avg_accuracy(base)).epsilon(1e-12));
    CHECK(avg_forgetting(scaled) == doctest::Approx(c * avg_forgetting(base)).epsilon(1e-12).scale(1.0));
    CHECK(avg_forgetting(shifted) == doctest::Approx(avg_forgetting(base)).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("csv uses percentages and leaves the upper triangle empty") {
  const ResultMatrix r = filled({{0.8}, {0.5, 0.6}});
  CHECK(r.to_csv() == "checkpoint,task_0,task_1\n0,80.00,\n1,50.00,60.00\n");
  CHECK(percent(0.12345) == "12.35");
}
