#include "dmix/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dmix::ops {
namespace {

using detail::Node;

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

// Returns the parent's grad buffer if it wants one, else nullptr.
double* grad_of(Node& self, std::size_t index) {
  Node& p = *self.parents[index];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

const double* value_of(const Node& self, std::size_t index) {
  return self.parents[index]->value.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " +
                         shape_string(a.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return Tensor::make_result(matrix_shape(m, n), std::move(out), {a, b},
                             [m, k, n](Node& self) {
                               const double* G = self.grad.data();
                               const double* A = value_of(self, 0);
                               const double* B = value_of(self, 1);
                               if (double* dA = grad_of(self, 0)) {
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     double acc = 0.0;
                                     const double* g = G + i * n;
                                     const double* brow = B + p * n;
                                     for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
                                     dA[i * k + p] += acc;
                                   }
                               }
                               if (double* dB = grad_of(self, 1)) {
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     const double aip = A[i * k + p];
                                     if (aip == 0.0) continue;
                                     const double* g = G + i * n;
                                     double* drow = dB + p * n;
                                     for (std::size_t j = 0; j < n; ++j) drow[j] += aip * g[j];
                                   }
                               }
                             });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * n + j] = acc;
    }
  return Tensor::make_result(matrix_shape(m, n), std::move(out), {a, b},
                             [m, k, n](Node& self) {
                               const double* G = self.grad.data();
                               const double* A = value_of(self, 0);
                               const double* B = value_of(self, 1);
                               double* dA = grad_of(self, 0);
                               double* dB = grad_of(self, 1);
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) {
                                   const double g = G[i * n + j];
                                   if (g == 0.0) continue;
                                   if (dA)
                                     for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[j * k + p];
                                   if (dB)
                                     for (std::size_t p = 0; p < k; ++p) dB[j * k + p] += g * A[i * k + p];
                                 }
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t idx = 0; idx < 2; ++idx)
      if (double* d = grad_of(self, idx))
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    if (double* d = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const double* A = value_of(self, 0);
    const double* B = value_of(self, 1);
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * B[i];
    if (double* d = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * A[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    throw DimensionError("add_row: row length " + std::to_string(row.size()) +
                         " does not match " + shape_string(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto r = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  return Tensor::make_result(a.shape(), std::move(out), {a, row}, [m, n](Node& self) {
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < m * n; ++i) d[i] += self.grad[i];
    if (double* d = grad_of(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[j] += self.grad[i * n + j];
  });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
  require_matrix(a, "mul_col");
  const std::size_t m = a.rows(), n = a.cols();
  if (col.size() != m) {
    throw DimensionError("mul_col: column length " + std::to_string(col.size()) +
                         " does not match " + shape_string(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto c = col.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= c[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, col}, [m, n](Node& self) {
    const double* A = value_of(self, 0);
    const double* C = value_of(self, 1);
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += self.grad[i * n + j] * C[i];
    if (double* d = grad_of(self, 1))
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * A[i * n + j];
        d[i] += acc;
      }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (self.value[i] > 0.0) d[i] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& a, bool causal) {
  require_matrix(a, "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw std::invalid_argument("softmax: empty input");
  if (causal && m > n) throw DimensionError("softmax_rows: causal mask needs rows <= cols");
  std::vector<double> out(m * n, 0.0);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t span = causal ? i + 1 : n;
    const double* row = x.data() + i * n;
    double peak = row[0];
    for (std::size_t j = 1; j < span; ++j) peak = std::max(peak, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < span; ++j) {
      out[i * n + j] = std::exp(row[j] - peak);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < span; ++j) out[i * n + j] /= total;
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [m, n](Node& self) {
    double* d = grad_of(self, 0);
    if (!d) return;
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor softmax(const Tensor& v) { return softmax_rows(v, false); }

Tensor log_softmax_rows(const Tensor& a) {
  require_matrix(a, "log_softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw std::invalid_argument("log_softmax: empty input");
  std::vector<double> out(m * n);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    const double peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [m, n](Node& self) {
    double* d = grad_of(self, 0);
    if (!d) return;
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[j];
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.rows() != 1) {
    throw DimensionError("cross_entropy: expected a single logit vector, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t t[1] = {target};
  return cross_entropy_rows(logits, t);
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets) {
  require_matrix(logits, "cross_entropy_rows");
  const std::size_t m = logits.rows(), n = logits.cols();
  if (n == 0) throw std::invalid_argument("cross_entropy: empty logits");
  if (targets.size() != m) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(m) + " rows");
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  for (std::size_t t : tgt) {
    if (t >= n) {
      throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                  " out of range for " + std::to_string(n) + " classes");
    }
  }
  // Probabilities are kept for the backward pass.
  std::vector<double> probs(m * n);
  double loss = 0.0;
  const auto x = logits.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    const double peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(row[j] - peak);
      total += probs[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= total;
    loss += (peak + std::log(total)) - row[tgt[i]];
  }
  loss /= static_cast<double>(m);
  return Tensor::make_result(
      {1}, {loss}, {logits},
      [m, n, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
        double* d = grad_of(self, 0);
        if (!d) return;
        const double g = self.grad[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g * probs[i * n + j];
          d[i * n + tgt[i]] -= g;
        }
      });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  require_matrix(a, "layer_norm_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  std::vector<double> inv_std(m);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (row[j] - mu) * inv_std[i];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [m, n, inv_std = std::move(inv_std)](Node& self) {
                               double* d = grad_of(self, 0);
                               if (!d) return;
                               const double nn = static_cast<double>(n);
                               for (std::size_t i = 0; i < m; ++i) {
                                 const double* y = self.value.data() + i * n;
                                 const double* g = self.grad.data() + i * n;
                                 double gsum = 0.0, gy = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) {
                                   gsum += g[j];
                                   gy += g[j] * y[j];
                                 }
                                 for (std::size_t j = 0; j < n; ++j)
                                   d[i * n + j] += inv_std[i] * (g[j] - gsum / nn - y[j] * gy / nn);
                               }
                             });
}

Tensor mean_rows(const Tensor& a) {
  require_matrix(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw DimensionError("mean_rows: no rows");
  std::vector<double> out(n, 0.0);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  return Tensor::make_result(matrix_shape(1, n), std::move(out), {a}, [m, n](Node& self) {
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += self.grad[j] / static_cast<double>(m);
  });
}

Tensor prefix_mean_rows(const Tensor& a) {
  require_matrix(a, "prefix_mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  std::vector<double> running(n, 0.0);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      running[j] += x[i * n + j];
      out[i * n + j] = running[j] / static_cast<double>(i + 1);
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [m, n](Node& self) {
    double* d = grad_of(self, 0);
    if (!d) return;
    // d x_k = sum_{i >= k} g_i / (i + 1); accumulate from the last row upward.
    std::vector<double> tail(n, 0.0);
    for (std::size_t r = m; r-- > 0;) {
      for (std::size_t j = 0; j < n; ++j) {
        tail[j] += self.grad[r * n + j] / static_cast<double>(r + 1);
        d[r * n + j] += tail[j];
      }
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > n) throw DimensionError("slice_cols: range exceeds " + shape_string(a.shape()));
  std::vector<double> out(m * count);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data() + i * n + begin, count, out.data() + i * count);
  return Tensor::make_result(matrix_shape(m, count), std::move(out), {a},
                             [m, n, begin, count](Node& self) {
                               if (double* d = grad_of(self, 0))
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < count; ++j)
                                     d[i * n + begin + j] += self.grad[i * count + j];
                             });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > m) throw DimensionError("slice_rows: range exceeds " + shape_string(a.shape()));
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return Tensor::make_result(matrix_shape(count, n), std::move(out), {a},
                             [n, begin, count](Node& self) {
                               if (double* d = grad_of(self, 0))
                                 for (std::size_t i = 0; i < count * n; ++i)
                                   d[begin * n + i] += self.grad[i];
                             });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts disagree");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(x.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  return Tensor::make_result(matrix_shape(m, total), std::move(out), parts,
                             [m, total, widths = std::move(widths)](Node& self) {
                               std::size_t offset = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (double* d = grad_of(self, k))
                                   for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       d[i * widths[k] + j] += self.grad[i * total + offset + j];
                                 offset += widths[k];
                               }
                             });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return Tensor::make_result({1}, {total}, {a}, [](Node& self) {
    if (double* d = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

}  // namespace dmix::ops
