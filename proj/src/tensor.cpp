#include "planperf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace planperf::nn {

std::size_t ParameterSet::add(std::string name, std::size_t rows, std::size_t cols) {
  names_.push_back(std::move(name));
  tensors_.emplace_back(rows, cols);
  offsets_.push_back(total_);
  total_ += rows * cols;
  return tensors_.size() - 1;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> out;
  out.reserve(total_);
  for (const auto& t : tensors_) out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

void ParameterSet::assign(std::span<const double> flat) {
  if (flat.size() != total_) throw std::invalid_argument("flat parameter size mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offsets_[i]), tensors_[i].size(),
                tensors_[i].values.begin());
  }
}

namespace {

void check_same_shape(std::size_t ra, std::size_t ca, std::size_t rb, std::size_t cb, const char* op) {
  if (ra != rb || ca != cb) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tape::Tape(const ParameterSet& params) : params_(&params) { nodes_.reserve(256); }

Tape::Var Tape::push(std::size_t rows, std::size_t cols, std::vector<double> values,
                     std::function<void(Tape&, Var)> backward) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.own = std::move(values);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

std::span<const double> Tape::value(Var v) const { return {data(v), nodes_[v].rows * nodes_[v].cols}; }

Tape::Var Tape::param(std::size_t index) {
  const Tensor& t = (*params_)[index];
  Node n;
  n.rows = t.rows();
  n.cols = t.cols();
  n.ext = t.values.data();
  n.param_index = static_cast<long>(index);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::Var Tape::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw std::invalid_argument("constant: size mismatch");
  return push(rows, cols, std::move(values), nullptr);
}

Tape::Var Tape::matmul(Var a, Var b) {
  const std::size_t n = rows(a), k = cols(a), m = cols(b);
  if (rows(b) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
  std::vector<double> out(n * m, 0.0);
  const double* A = data(a);
  const double* B = data(b);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * brow[j];
    }
  }
  return push(n, m, std::move(out), [a, b, n, k, m](Tape& t, Var self) {
    const double* G = t.grad(self);
    const double* A = t.data(a);
    const double* B = t.data(b);
    double* GA = t.grad(a);
    double* GB = t.grad(b);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double s = 0;
        for (std::size_t j = 0; j < m; ++j) s += G[i * m + j] * B[p * m + j];
        GA[i * k + p] += s;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        for (std::size_t j = 0; j < m; ++j) GB[p * m + j] += av * G[i * m + j];
      }
    }
  });
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  const std::size_t n = rows(a), k = cols(a), m = rows(b);
  if (cols(b) != k) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  std::vector<double> out(n * m, 0.0);
  const double* A = data(a);
  const double* B = data(b);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out[i * m + j] = s;
    }
  }
  return push(n, m, std::move(out), [a, b, n, k, m](Tape& t, Var self) {
    const double* G = t.grad(self);
    const double* A = t.data(a);
    const double* B = t.data(b);
    double* GA = t.grad(a);
    double* GB = t.grad(b);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double g = G[i * m + j];
        if (g == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          GA[i * k + p] += g * B[j * k + p];
          GB[j * k + p] += g * A[i * k + p];
        }
      }
    }
  });
}

Tape::Var Tape::add(Var a, Var b) {
  check_same_shape(rows(a), cols(a), rows(b), cols(b), "add");
  const std::size_t size = rows(a) * cols(a);
  std::vector<double> out(size);
  const double* A = data(a);
  const double* B = data(b);
  for (std::size_t i = 0; i < size; ++i) out[i] = A[i] + B[i];
  return push(rows(a), cols(a), std::move(out), [a, b, size](Tape& t, Var self) {
    const double* G = t.grad(self);
    double* GA = t.grad(a);
    double* GB = t.grad(b);
    for (std::size_t i = 0; i < size; ++i) {
      GA[i] += G[i];
      GB[i] += G[i];
    }
  });
}

Tape::Var Tape::add_row(Var a, Var row) {
  const std::size_t n = rows(a), m = cols(a);
  if (rows(row) != 1 || cols(row) != m) throw std::invalid_argument("add_row: row shape mismatch");
  std::vector<double> out(n * m);
  const double* A = data(a);
  const double* R = data(row);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = A[i * m + j] + R[j];
  }
  return push(n, m, std::move(out), [a, row, n, m](Tape& t, Var self) {
    const double* G = t.grad(self);
    double* GA = t.grad(a);
    double* GR = t.grad(row);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        GA[i * m + j] += G[i * m + j];
        GR[j] += G[i * m + j];
      }
    }
  });
}

Tape::Var Tape::scale(Var a, double s) {
  const std::size_t size = rows(a) * cols(a);
  std::vector<double> out(size);
  const double* A = data(a);
  for (std::size_t i = 0; i < size; ++i) out[i] = A[i] * s;
  return push(rows(a), cols(a), std::move(out), [a, s, size](Tape& t, Var self) {
    const double* G = t.grad(self);
    double* GA = t.grad(a);
    for (std::size_t i = 0; i < size; ++i) GA[i] += G[i] * s;
  });
}

Tape::Var Tape::gelu(Var a) {
  const std::size_t size = rows(a) * cols(a);
  std::vector<double> out(size);
  const double* A = data(a);
  for (std::size_t i = 0; i < size; ++i) out[i] = 0.5 * A[i] * (1.0 + std::erf(A[i] * kInvSqrt2));
  return push(rows(a), cols(a), std::move(out), [a, size](Tape& t, Var self) {
    const double* G = t.grad(self);
    const double* A = t.data(a);
    double* GA = t.grad(a);
    for (std::size_t i = 0; i < size; ++i) {
      const double x = A[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      GA[i] += G[i] * (cdf + x * pdf);
    }
  });
}

Tape::Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const std::size_t n = rows(x), m = cols(x);
  if (rows(gamma) != 1 || cols(gamma) != m || rows(beta) != 1 || cols(beta) != m) {
    throw std::invalid_argument("layer_norm: parameter shape mismatch");
  }
  std::vector<double> out(n * m);
  std::vector<double> xhat(n * m);
  std::vector<double> inv_std(n);
  const double* X = data(x);
  const double* Gm = data(gamma);
  const double* Bt = data(beta);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0;
    for (std::size_t j = 0; j < m; ++j) mean += X[i * m + j];
    mean /= static_cast<double>(m);
    double var = 0;
    for (std::size_t j = 0; j < m; ++j) var += (X[i * m + j] - mean) * (X[i * m + j] - mean);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (X[i * m + j] - mean) * inv_std[i];
      out[i * m + j] = xhat[i * m + j] * Gm[j] + Bt[j];
    }
  }
  return push(n, m, std::move(out),
              [x, gamma, beta, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, Var self) {
                const double* G = t.grad(self);
                const double* Gm = t.data(gamma);
                double* GX = t.grad(x);
                double* GG = t.grad(gamma);
                double* GB = t.grad(beta);
                std::vector<double> dxhat(m);
                for (std::size_t i = 0; i < n; ++i) {
                  double sum_d = 0, sum_dx = 0;
                  for (std::size_t j = 0; j < m; ++j) {
                    const double g = G[i * m + j];
                    GG[j] += g * xhat[i * m + j];
                    GB[j] += g;
                    dxhat[j] = g * Gm[j];
                    sum_d += dxhat[j];
                    sum_dx += dxhat[j] * xhat[i * m + j];
                  }
                  const double inv_m = 1.0 / static_cast<double>(m);
                  for (std::size_t j = 0; j < m; ++j) {
                    GX[i * m + j] += inv_std[i] * (dxhat[j] - inv_m * sum_d - xhat[i * m + j] * inv_m * sum_dx);
                  }
                }
              });
}

Tape::Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const std::size_t n = rows(a), m = cols(a), w = end - begin;
  if (begin > end || end > m) throw std::invalid_argument("slice_cols: bad range");
  std::vector<double> out(n * w);
  const double* A = data(a);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(A + i * m + begin, w, out.data() + i * w);
  return push(n, w, std::move(out), [a, begin, n, m, w](Tape& t, Var self) {
    const double* G = t.grad(self);
    double* GA = t.grad(a);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) GA[i * m + begin + j] += G[i * w + j];
    }
  });
}

Tape::Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const std::size_t m = cols(a);
  if (begin > end || end > rows(a)) throw std::invalid_argument("slice_rows: bad range");
  const double* A = data(a);
  std::vector<double> out(A + begin * m, A + end * m);
  return push(end - begin, m, std::move(out), [a, begin, end, m](Tape& t, Var self) {
    const double* G = t.grad(self);
    double* GA = t.grad(a) + begin * m;
    for (std::size_t i = 0; i < (end - begin) * m; ++i) GA[i] += G[i];
  });
}

Tape::Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t n = rows(parts[0]);
  std::size_t m = 0;
  for (Var p : parts) {
    if (rows(p) != n) throw std::invalid_argument("concat_cols: row mismatch");
    m += cols(p);
  }
  std::vector<double> out(n * m);
  std::size_t off = 0;
  for (Var p : parts) {
    const std::size_t w = cols(p);
    const double* P = data(p);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(P + i * w, w, out.data() + i * m + off);
    off += w;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(n, m, std::move(out), [inputs = std::move(inputs), n, m](Tape& t, Var self) {
    const double* G = t.grad(self);
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t w = t.cols(p);
      double* GP = t.grad(p);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < w; ++j) GP[i * w + j] += G[i * m + off + j];
      }
      off += w;
    }
  });
}

Tape::Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t m = cols(parts[0]);
  std::vector<double> out;
  std::size_t n = 0;
  for (Var p : parts) {
    if (cols(p) != m) throw std::invalid_argument("concat_rows: column mismatch");
    auto v = value(p);
    out.insert(out.end(), v.begin(), v.end());
    n += rows(p);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(n, m, std::move(out), [inputs = std::move(inputs), m](Tape& t, Var self) {
    const double* G = t.grad(self);
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t size = t.rows(p) * m;
      double* GP = t.grad(p);
      for (std::size_t i = 0; i < size; ++i) GP[i] += G[off + i];
      off += size;
    }
  });
}

Tape::Var Tape::gather_rows(Var table, std::span<const int> idx) {
  const std::size_t m = cols(table), vocab = rows(table), n = idx.size();
  std::vector<double> out(n * m);
  const double* T = data(table);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(idx[i]);
    if (idx[i] < 0 || r >= vocab) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(T + r * m, m, out.data() + i * m);
  }
  std::vector<int> rows_copy(idx.begin(), idx.end());
  return push(n, m, std::move(out), [table, m, rows_copy = std::move(rows_copy)](Tape& t, Var self) {
    const double* G = t.grad(self);
    double* GT = t.grad(table);
    for (std::size_t i = 0; i < rows_copy.size(); ++i) {
      const auto r = static_cast<std::size_t>(rows_copy[i]);
      for (std::size_t j = 0; j < m; ++j) GT[r * m + j] += G[i * m + j];
    }
  });
}

Tape::Var Tape::gather_codes(Var table, std::size_t row, std::span<const int> codes, std::size_t n,
                             std::size_t m) {
  if (codes.size() != n * m) throw std::invalid_argument("gather_codes: size mismatch");
  const std::size_t width = cols(table);
  if (row >= rows(table)) throw std::out_of_range("gather_codes: row out of range");
  std::vector<double> out(n * m);
  const double* T = data(table) + row * width;
  for (std::size_t i = 0; i < n * m; ++i) {
    if (codes[i] < 0 || static_cast<std::size_t>(codes[i]) >= width) {
      throw std::out_of_range("gather_codes: code out of range");
    }
    out[i] = T[codes[i]];
  }
  std::vector<int> codes_copy(codes.begin(), codes.end());
  return push(n, m, std::move(out), [table, row, width, codes_copy = std::move(codes_copy)](Tape& t, Var self) {
    const double* G = t.grad(self);
    double* GT = t.grad(table) + row * width;
    for (std::size_t i = 0; i < codes_copy.size(); ++i) GT[codes_copy[i]] += G[i];
  });
}

Tape::Var Tape::masked_softmax(Var scores, std::span<const std::uint8_t> mask) {
  const std::size_t n = rows(scores), m = cols(scores);
  if (mask.size() != n * m) throw std::invalid_argument("masked_softmax: mask size mismatch");
  std::vector<double> out(n * m, 0.0);
  const double* S = data(scores);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (mask[i * m + j]) mx = std::max(mx, S[i * m + j]);
    }
    if (!std::isfinite(mx)) throw std::invalid_argument("masked_softmax: row with no allowed entry");
    double z = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask[i * m + j]) continue;
      out[i * m + j] = std::exp(S[i * m + j] - mx);
      z += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  return push(n, m, std::move(out), [scores, n, m](Tape& t, Var self) {
    const double* G = t.grad(self);
    const double* P = t.data(self);
    double* GS = t.grad(scores);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += G[i * m + j] * P[i * m + j];
      for (std::size_t j = 0; j < m; ++j) GS[i * m + j] += P[i * m + j] * (G[i * m + j] - dot);
    }
  });
}

Tape::Var Tape::mse(Var pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  const std::size_t size = rows(pred) * cols(pred);
  if (target.size() != size || mask.size() != size) throw std::invalid_argument("mse: size mismatch");
  const double* P = data(pred);
  std::size_t count = 0;
  double s = 0;
  for (std::size_t i = 0; i < size; ++i) {
    if (!mask[i]) continue;
    s += (P[i] - target[i]) * (P[i] - target[i]);
    ++count;
  }
  const double value = count == 0 ? 0.0 : s / static_cast<double>(count);
  std::vector<double> t_copy(target.begin(), target.end());
  std::vector<std::uint8_t> m_copy(mask.begin(), mask.end());
  return push(1, 1, {value},
              [pred, count, t_copy = std::move(t_copy), m_copy = std::move(m_copy)](Tape& t, Var self) {
                if (count == 0) return;
                const double g = t.grad(self)[0] * 2.0 / static_cast<double>(count);
                const double* P = t.data(pred);
                double* GP = t.grad(pred);
                for (std::size_t i = 0; i < t_copy.size(); ++i) {
                  if (m_copy[i]) GP[i] += g * (P[i] - t_copy[i]);
                }
              });
}

Tape::Var Tape::cross_entropy(Var logits, int label) {
  const std::size_t k = rows(logits) * cols(logits);
  if (label < 0 || static_cast<std::size_t>(label) >= k) throw std::invalid_argument("cross_entropy: bad label");
  const double* L = data(logits);
  const double mx = *std::max_element(L, L + k);
  std::vector<double> p(k);
  double z = 0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = std::exp(L[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  const double value = -(L[label] - mx - std::log(z));
  return push(1, 1, {value}, [logits, label, p = std::move(p)](Tape& t, Var self) {
    const double g = t.grad(self)[0];
    double* GL = t.grad(logits);
    for (std::size_t i = 0; i < p.size(); ++i) {
      GL[i] += g * (p[i] - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
  });
}

Tape::Var Tape::add_scaled(Var a, Var b, double s) {
  check_same_shape(rows(a), cols(a), rows(b), cols(b), "add_scaled");
  const std::size_t size = rows(a) * cols(a);
  std::vector<double> out(size);
  const double* A = data(a);
  const double* B = data(b);
  for (std::size_t i = 0; i < size; ++i) out[i] = A[i] + s * B[i];
  return push(rows(a), cols(a), std::move(out), [a, b, s, size](Tape& t, Var self) {
    const double* G = t.grad(self);
    double* GA = t.grad(a);
    double* GB = t.grad(b);
    for (std::size_t i = 0; i < size; ++i) {
      GA[i] += G[i];
      GB[i] += s * G[i];
    }
  });
}

void Tape::backward(Var root) {
  if (rows(root) * cols(root) != 1) throw std::invalid_argument("backward needs a scalar root");
  for (auto& n : nodes_) n.grad.assign(n.rows * n.cols, 0.0);
  nodes_[root].grad[0] = 1.0;
  for (Var v = root + 1; v-- > 0;) {
    if (nodes_[v].backward) nodes_[v].backward(*this, v);
  }
}

void Tape::accumulate_param_grads(std::span<double> flat) const {
  for (const auto& n : nodes_) {
    if (n.param_index < 0 || n.grad.empty()) continue;
    const auto idx = static_cast<std::size_t>(n.param_index);
    double* dst = flat.data() + params_->offset(idx);
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  }
}

}  // namespace planperf::nn
