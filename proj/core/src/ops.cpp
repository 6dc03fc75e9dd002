#include "kaprompt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>
#include <optional>
#include <string>

#include "kaprompt/errors.hpp"

namespace kaprompt::ops {

namespace {

using Grads = std::vector<std::vector<double>>;
using Slot = std::optional<std::size_t>;

// Tape nodes of the operands of one operation, resolved up front.
struct Recording {
  GradientTape* tape = nullptr;
  std::vector<Slot> slots;

  explicit operator bool() const { return tape != nullptr; }
  std::vector<std::size_t> inputs() const {
    std::vector<std::size_t> out;
    for (const Slot& s : slots)
      if (s) out.push_back(*s);
    return out;
  }
};

Recording prepare(std::initializer_list<const Tensor*> operands) {
  Recording rec;
  const bool any = std::any_of(operands.begin(), operands.end(),
                               [](const Tensor* t) { return t->on_tape(); });
  if (!any) return rec;
  rec.tape = GradientTape::active();
  if (rec.tape == nullptr) {
    throw UsageError("operation on a taped tensor without an active gradient tape");
  }
  for (const Tensor* t : operands) {
    rec.slots.push_back(t->on_tape() ? Slot(rec.tape->node_of(*t)) : std::nullopt);
  }
  return rec;
}

Recording prepare(std::span<const Tensor> operands) {
  Recording rec;
  const bool any = std::any_of(operands.begin(), operands.end(),
                               [](const Tensor& t) { return t.on_tape(); });
  if (!any) return rec;
  rec.tape = GradientTape::active();
  if (rec.tape == nullptr) {
    throw UsageError("operation on a taped tensor without an active gradient tape");
  }
  for (const Tensor& t : operands) {
    rec.slots.push_back(t.on_tape() ? Slot(rec.tape->node_of(t)) : std::nullopt);
  }
  return rec;
}

std::vector<double>& slot_grad(Grads& grads, std::size_t node, std::size_t n) {
  auto& g = grads[node];
  if (g.empty()) g.assign(n, 0.0);
  return g;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(a.shape()));
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_error("matmul", a, b);

  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  Tensor result({m, n}, std::move(out));

  if (auto rec = prepare({&a, &b})) {
    rec.tape->record(
        result, rec.inputs(),
        [sa = rec.slots[0], sb = rec.slots[1], A = to_vec(av), B = to_vec(bv), m, k,
         n](std::span<const double> g, Grads& grads) {
          if (sa) {
            auto& ga = slot_grad(grads, *sa, m * k);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                ga[i * k + p] += acc;
              }
          }
          if (sb) {
            auto& gb = slot_grad(grads, *sb, k * n);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
              }
          }
        });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  Tensor result({n, m}, std::move(out));
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], m, n](std::span<const double> g, Grads& grads) {
                       auto& ga = slot_grad(grads, s, m * n);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                     });
  }
  return result;
}

namespace {

// Shared implementation of a + sign*b.
Tensor add_signed(const char* op, const Tensor& a, const Tensor& b, double sign) {
  require_same(op, a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + sign * b[i];
  Tensor result(a.shape(), std::move(out));
  if (auto rec = prepare({&a, &b})) {
    rec.tape->record(result, rec.inputs(),
                     [sa = rec.slots[0], sb = rec.slots[1], sign,
                      n = a.size()](std::span<const double> g, Grads& grads) {
                       if (sa) {
                         auto& ga = slot_grad(grads, *sa, n);
                         for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                       }
                       if (sb) {
                         auto& gb = slot_grad(grads, *sb, n);
                         for (std::size_t i = 0; i < n; ++i) gb[i] += sign * g[i];
                       }
                     });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_signed("add", a, b, 1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_signed("sub", a, b, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor result(a.shape(), std::move(out));
  if (auto rec = prepare({&a, &b})) {
    rec.tape->record(result, rec.inputs(),
                     [sa = rec.slots[0], sb = rec.slots[1], A = to_vec(a.values()),
                      B = to_vec(b.values())](std::span<const double> g, Grads& grads) {
                       const std::size_t n = A.size();
                       if (sa) {
                         auto& ga = slot_grad(grads, *sa, n);
                         for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * B[i];
                       }
                       if (sb) {
                         auto& gb = slot_grad(grads, *sb, n);
                         for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * A[i];
                       }
                     });
  }
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  Tensor result(a.shape(), std::move(out));
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], factor, n = a.size()](std::span<const double> g,
                                                               Grads& grads) {
                       auto& ga = slot_grad(grads, s, n);
                       for (std::size_t i = 0; i < n; ++i) ga[i] += factor * g[i];
                     });
  }
  return result;
}

Tensor add_scalar(const Tensor& a, double offset) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + offset;
  Tensor result(a.shape(), std::move(out));
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], n = a.size()](std::span<const double> g,
                                                       Grads& grads) {
                       auto& ga = slot_grad(grads, s, n);
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                     });
  }
  return result;
}

Tensor add_row_vector(const Tensor& m, const Tensor& v) {
  require_matrix("add_row_vector", m);
  if (v.rank() != 1 || v.size() != m.cols()) shape_error("add_row_vector", m, v);
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = m[r * cols + c] + v[c];
  Tensor result(m.shape(), std::move(out));
  if (auto rec = prepare({&m, &v})) {
    rec.tape->record(result, rec.inputs(),
                     [sm = rec.slots[0], sv = rec.slots[1], rows,
                      cols](std::span<const double> g, Grads& grads) {
                       if (sm) {
                         auto& gm = slot_grad(grads, *sm, rows * cols);
                         for (std::size_t i = 0; i < rows * cols; ++i) gm[i] += g[i];
                       }
                       if (sv) {
                         auto& gv = slot_grad(grads, *sv, cols);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
                       }
                     });
  }
  return result;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const Tensor& p : parts) {
    if (p.rank() == 0 || p.cols() != cols) shape_error("concat_rows", parts.front(), p);
    rows += p.rows();
    sizes.push_back(p.size());
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor result({rows, cols}, std::move(out));
  if (auto rec = prepare(parts)) {
    rec.tape->record(result, rec.inputs(),
                     [slots = rec.slots, sizes](std::span<const double> g, Grads& grads) {
                       std::size_t offset = 0;
                       for (std::size_t i = 0; i < slots.size(); ++i) {
                         if (slots[i]) {
                           auto& gp = slot_grad(grads, *slots[i], sizes[i]);
                           for (std::size_t j = 0; j < sizes[i]; ++j) gp[j] += g[offset + j];
                         }
                         offset += sizes[i];
                       }
                     });
  }
  return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    require_matrix("concat_cols", p);
    if (p.rows() != rows) shape_error("concat_cols", parts.front(), p);
    cols += p.cols();
    widths.push_back(p.cols());
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out[r * cols + offset + c] = p.at(r, c);
    offset += p.cols();
  }
  Tensor result({rows, cols}, std::move(out));
  if (auto rec = prepare(parts)) {
    rec.tape->record(result, rec.inputs(),
                     [slots = rec.slots, widths, rows, cols](std::span<const double> g,
                                                             Grads& grads) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < slots.size(); ++i) {
                         const std::size_t w = widths[i];
                         if (slots[i]) {
                           auto& gp = slot_grad(grads, *slots[i], rows * w);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < w; ++c)
                               gp[r * w + c] += g[r * cols + off + c];
                         }
                         off += w;
                       }
                     });
  }
  return result;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix("slice_rows", a);
  if (begin + count > a.rows() || count == 0) {
    throw IndexError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_string(a.shape()));
  }
  const std::size_t cols = a.cols();
  std::vector<double> out(a.values().begin() + begin * cols,
                          a.values().begin() + (begin + count) * cols);
  Tensor result({count, cols}, std::move(out));
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], n = a.size(), offset = begin * cols,
                      len = count * cols](std::span<const double> g, Grads& grads) {
                       auto& ga = slot_grad(grads, s, n);
                       for (std::size_t i = 0; i < len; ++i) ga[offset + i] += g[i];
                     });
  }
  return result;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix("slice_cols", a);
  if (begin + count > a.cols() || count == 0) {
    throw IndexError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_string(a.shape()));
  }
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = a[r * cols + begin + c];
  Tensor result({rows, count}, std::move(out));
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], rows, cols, begin, count](std::span<const double> g,
                                                                   Grads& grads) {
                       auto& ga = slot_grad(grads, s, rows * cols);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < count; ++c)
                           ga[r * cols + begin + c] += g[r * count + c];
                     });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  }
  Tensor result(std::move(shape), to_vec(a.values()));
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], n = a.size()](std::span<const double> g,
                                                       Grads& grads) {
                       auto& ga = slot_grad(grads, s, n);
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                     });
  }
  return result;
}

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() == 0) throw DimensionError("softmax_rows: scalar input");
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = a.values().data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  Tensor result(a.shape(), out);
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], Y = std::move(out), rows,
                      cols](std::span<const double> g, Grads& grads) {
                       auto& ga = slot_grad(grads, s, rows * cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * cols;
                         double inner = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) inner += g[base + c] * Y[base + c];
                         for (std::size_t c = 0; c < cols; ++c)
                           ga[base + c] += Y[base + c] * (g[base + c] - inner);
                       }
                     });
  }
  return result;
}

Tensor l2_normalize_rows(const Tensor& a) {
  if (a.rank() == 0) throw DimensionError("l2_normalize_rows: scalar input");
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += a[r * cols + c] * a[r * cols + c];
    norms[r] = std::sqrt(sq);
    if (norms[r] < kNormEpsilon) {
      throw DegenerateVectorError("l2_normalize_rows: row " + std::to_string(r) +
                                  " has norm below 1e-12");
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a[r * cols + c] / norms[r];
  }
  Tensor result(a.shape(), out);
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], Y = std::move(out), norms = std::move(norms), rows,
                      cols](std::span<const double> g, Grads& grads) {
                       auto& ga = slot_grad(grads, s, rows * cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * cols;
                         double inner = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) inner += g[base + c] * Y[base + c];
                         for (std::size_t c = 0; c < cols; ++c)
                           ga[base + c] += (g[base + c] - Y[base + c] * inner) / norms[r];
                       }
                     });
  }
  return result;
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                       double eps) {
  require_matrix("layer_norm_rows", a);
  const std::size_t rows = a.rows(), cols = a.cols();
  if (gamma.size() != cols) shape_error("layer_norm_rows", a, gamma);
  if (beta.size() != cols) shape_error("layer_norm_rows", a, beta);

  std::vector<double> xhat(a.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += a[base + c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (a[base + c] - mu) * (a[base + c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat[base + c] = (a[base + c] - mu) * inv_std[r];
      out[base + c] = gamma[c] * xhat[base + c] + beta[c];
    }
  }
  Tensor result(a.shape(), std::move(out));
  if (auto rec = prepare({&a, &gamma, &beta})) {
    rec.tape->record(
        result, rec.inputs(),
        [sx = rec.slots[0], sg = rec.slots[1], sb = rec.slots[2], xhat = std::move(xhat),
         inv_std = std::move(inv_std), G = to_vec(gamma.values()), rows,
         cols](std::span<const double> g, Grads& grads) {
          const double n = static_cast<double>(cols);
          if (sx) {
            auto& gx = slot_grad(grads, *sx, rows * cols);
            for (std::size_t r = 0; r < rows; ++r) {
              const std::size_t base = r * cols;
              double mean_d = 0.0, mean_dx = 0.0;
              for (std::size_t c = 0; c < cols; ++c) {
                const double d = g[base + c] * G[c];
                mean_d += d;
                mean_dx += d * xhat[base + c];
              }
              mean_d /= n;
              mean_dx /= n;
              for (std::size_t c = 0; c < cols; ++c) {
                const double d = g[base + c] * G[c];
                gx[base + c] += inv_std[r] * (d - mean_d - xhat[base + c] * mean_dx);
              }
            }
          }
          if (sg) {
            auto& gg = slot_grad(grads, *sg, cols);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c)
                gg[c] += g[r * cols + c] * xhat[r * cols + c];
          }
          if (sb) {
            auto& gb = slot_grad(grads, *sb, cols);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
          }
        });
  }
  return result;
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  Tensor result(a.shape(), out);
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], Y = std::move(out)](std::span<const double> g,
                                                             Grads& grads) {
                       auto& ga = slot_grad(grads, s, Y.size());
                       for (std::size_t i = 0; i < Y.size(); ++i) ga[i] += g[i] * Y[i];
                     });
  }
  return result;
}

Tensor min_with_zero(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a[i], 0.0);
  Tensor result(a.shape(), std::move(out));
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], A = to_vec(a.values())](std::span<const double> g,
                                                                 Grads& grads) {
                       auto& ga = slot_grad(grads, s, A.size());
                       for (std::size_t i = 0; i < A.size(); ++i)
                         if (A[i] < 0.0) ga[i] += g[i];
                     });
  }
  return result;
}

Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  Tensor result(a.shape(), std::move(out));
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], A = to_vec(a.values())](std::span<const double> g,
                                                                 Grads& grads) {
                       auto& ga = slot_grad(grads, s, A.size());
                       for (std::size_t i = 0; i < A.size(); ++i) {
                         const double x = A[i];
                         const double t = std::tanh(kC * (x + kA * x * x * x));
                         const double d = 0.5 * (1.0 + t) +
                                          0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
                         ga[i] += g[i] * d;
                       }
                     });
  }
  return result;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor result = Tensor::scalar(total);
  if (auto rec = prepare({&a})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], n = a.size()](std::span<const double> g,
                                                       Grads& grads) {
                       auto& ga = slot_grad(grads, s, n);
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                     });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw EmptyInputError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) shape_error("dot", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  Tensor result = Tensor::scalar(acc);
  if (auto rec = prepare({&a, &b})) {
    rec.tape->record(result, rec.inputs(),
                     [sa = rec.slots[0], sb = rec.slots[1], A = to_vec(a.values()),
                      B = to_vec(b.values())](std::span<const double> g, Grads& grads) {
                       if (sa) {
                         auto& ga = slot_grad(grads, *sa, A.size());
                         for (std::size_t i = 0; i < A.size(); ++i) ga[i] += g[0] * B[i];
                       }
                       if (sb) {
                         auto& gb = slot_grad(grads, *sb, B.size());
                         for (std::size_t i = 0; i < B.size(); ++i) gb[i] += g[0] * A[i];
                       }
                     });
  }
  return result;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) shape_error("cosine_similarity", a, b);
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < kNormEpsilon || nb < kNormEpsilon) {
    throw DegenerateVectorError("cosine_similarity: vector norm below 1e-12");
  }
  const double cos = ab / (na * nb);
  Tensor result = Tensor::scalar(cos);
  if (auto rec = prepare({&a, &b})) {
    rec.tape->record(result, rec.inputs(),
                     [sa = rec.slots[0], sb = rec.slots[1], A = to_vec(a.values()),
                      B = to_vec(b.values()), na, nb, cos](std::span<const double> g,
                                                           Grads& grads) {
                       const std::size_t n = A.size();
                       if (sa) {
                         auto& ga = slot_grad(grads, *sa, n);
                         for (std::size_t i = 0; i < n; ++i)
                           ga[i] += g[0] * (B[i] / (na * nb) - cos * A[i] / (na * na));
                       }
                       if (sb) {
                         auto& gb = slot_grad(grads, *sb, n);
                         for (std::size_t i = 0; i < n; ++i)
                           gb[i] += g[0] * (A[i] / (na * nb) - cos * B[i] / (nb * nb));
                       }
                     });
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1 || logits.size() == 0) {
    throw DimensionError("cross_entropy: logits must be a nonempty vector, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t n = logits.size();
  if (label >= n) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(n) + ")");
  }
  const double mx = *std::max_element(logits.values().begin(), logits.values().end());
  double total = 0.0;
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  const double loss = std::log(total) - (logits[label] - mx);
  Tensor result = Tensor::scalar(loss);
  if (auto rec = prepare({&logits})) {
    rec.tape->record(result, rec.inputs(),
                     [s = *rec.slots[0], P = std::move(probs), label](std::span<const double> g,
                                                                      Grads& grads) {
                       auto& gl = slot_grad(grads, s, P.size());
                       for (std::size_t i = 0; i < P.size(); ++i)
                         gl[i] += g[0] * (P[i] - (i == label ? 1.0 : 0.0));
                     });
  }
  return result;
}

}  // namespace kaprompt::ops
