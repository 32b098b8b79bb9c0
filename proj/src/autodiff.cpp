#include "fedlm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "fedlm/kernels.hpp"

namespace fedlm::ad {

using kernels::GemmShape;
using kernels::Trans;

const Tensor& Var::value() const {
  if (tape == nullptr) throw UsageError("Var is not attached to a tape");
  return tape->value(id);
}

void Tape::check_owned(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw UsageError("variable does not belong to this tape");
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  require_finite(value, "leaf");
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(const char* op, Tensor value,
                 std::initializer_list<Var> parents, BackwardFn fn) {
  return record(op, std::move(value),
                std::span<const Var>(parents.begin(), parents.size()),
                std::move(fn));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> parents,
                 BackwardFn fn) {
  if (backward_done_) throw UsageError("tape already consumed by backward()");
  require_finite(value, op);
  bool needs = false;
  for (const Var& p : parents) {
    check_owned(p);
    needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, false,
                        needs ? std::move(fn) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_mut(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape, 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape, 0.0);
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (backward_done_) throw UsageError("backward() called twice on a tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw UsageError("backward() needs a scalar loss");
  }
  backward_done_ = true;
  grad_mut(loss.id).values[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

namespace {

struct Dims {
  std::size_t rows;
  std::size_t cols;
};

Dims matrix_dims(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " +
                         shape_string(t.shape));
  }
  return {t.shape[0], t.shape[1]};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape) +
                         " vs " + shape_string(b.shape));
  }
}

template <typename F>
Var unary(const char* op, Var a, F forward_and_derivative) {
  const Tensor& x = a.value();
  Tensor y(x.shape);
  auto dydx = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [v, d] = forward_and_derivative(x[i]);
    y[i] = v;
    (*dydx)[i] = d;
  }
  return a.tape->record(op, std::move(y), {a},
                        [a, dydx](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_mut(self);
                          Tensor& ga = t.grad_mut(a.id);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            ga[i] += g[i] * (*dydx)[i];
                          }
                        });
}

}  // namespace

Var matmul(Var a, Var b) {
  const auto da = matrix_dims(a.value(), "matmul");
  const auto db = matrix_dims(b.value(), "matmul");
  if (da.cols != db.rows) {
    throw DimensionError("matmul inner dimensions differ: " +
                         shape_string(a.value().shape) + " x " +
                         shape_string(b.value().shape));
  }
  Tensor c({da.rows, db.cols});
  kernels::gemm(Trans::no, Trans::no, {da.rows, db.cols, da.cols},
                a.value().values, b.value().values, c.values, false);
  return a.tape->record(
      "matmul", std::move(c), {a, b}, [a, b, da, db](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_mut(self);
        if (t.requires_grad(a.id)) {
          kernels::gemm(Trans::no, Trans::yes, {da.rows, da.cols, db.cols},
                        g.values, t.value(b.id).values,
                        t.grad_mut(a.id).values, true);
        }
        if (t.requires_grad(b.id)) {
          kernels::gemm(Trans::yes, Trans::no, {db.rows, db.cols, da.rows},
                        t.value(a.id).values, g.values,
                        t.grad_mut(b.id).values, true);
        }
      });
}

Var matmul_bt(Var a, Var b) {
  const auto da = matrix_dims(a.value(), "matmul_bt");
  const auto db = matrix_dims(b.value(), "matmul_bt");
  if (da.cols != db.cols) {
    throw DimensionError("matmul_bt inner dimensions differ: " +
                         shape_string(a.value().shape) + " x " +
                         shape_string(b.value().shape) + "^T");
  }
  Tensor c({da.rows, db.rows});
  kernels::gemm(Trans::no, Trans::yes, {da.rows, db.rows, da.cols},
                a.value().values, b.value().values, c.values, false);
  return a.tape->record(
      "matmul_bt", std::move(c), {a, b},
      [a, b, da, db](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_mut(self);
        if (t.requires_grad(a.id)) {
          kernels::gemm(Trans::no, Trans::no, {da.rows, da.cols, db.rows},
                        g.values, t.value(b.id).values,
                        t.grad_mut(a.id).values, true);
        }
        if (t.requires_grad(b.id)) {
          kernels::gemm(Trans::yes, Trans::no, {db.rows, db.cols, da.rows},
                        g.values, t.value(a.id).values,
                        t.grad_mut(b.id).values, true);
        }
      });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b.value()[i];
  return a.tape->record("add", std::move(c), {a, b},
                        [a, b](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_mut(self);
                          for (Var p : {a, b}) {
                            if (!t.requires_grad(p.id)) continue;
                            Tensor& gp = t.grad_mut(p.id);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gp[i] += g[i];
                          }
                        });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b.value()[i];
  return a.tape->record("sub", std::move(c), {a, b},
                        [a, b](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_mut(self);
                          if (t.requires_grad(a.id)) {
                            Tensor& ga = t.grad_mut(a.id);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i];
                          }
                          if (t.requires_grad(b.id)) {
                            Tensor& gb = t.grad_mut(b.id);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gb[i] -= g[i];
                          }
                        });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b.value()[i];
  return a.tape->record("mul", std::move(c), {a, b},
                        [a, b](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_mut(self);
                          if (t.requires_grad(a.id)) {
                            const Tensor& bv = t.value(b.id);
                            Tensor& ga = t.grad_mut(a.id);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i] * bv[i];
                          }
                          if (t.requires_grad(b.id)) {
                            const Tensor& av = t.value(a.id);
                            Tensor& gb = t.grad_mut(b.id);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gb[i] += g[i] * av[i];
                          }
                        });
}

Var add_row(Var a, Var bias) {
  const auto da = matrix_dims(a.value(), "add_row");
  if (bias.value().size() != da.cols) {
    throw DimensionError("add_row: bias " + shape_string(bias.value().shape) +
                         " for rows of width " + std::to_string(da.cols));
  }
  Tensor c = a.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < da.rows; ++r)
    for (std::size_t j = 0; j < da.cols; ++j) c[r * da.cols + j] += bv[j];
  return a.tape->record("add_row", std::move(c), {a, bias},
                        [a, bias, da](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_mut(self);
                          if (t.requires_grad(a.id)) {
                            Tensor& ga = t.grad_mut(a.id);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i];
                          }
                          if (t.requires_grad(bias.id)) {
                            Tensor& gb = t.grad_mut(bias.id);
                            for (std::size_t r = 0; r < da.rows; ++r)
                              for (std::size_t j = 0; j < da.cols; ++j)
                                gb[j] += g[r * da.cols + j];
                          }
                        });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double x) {
    return std::pair{c * x, c};
  });
}

Var one_minus(Var a) {
  return unary("one_minus", a, [](double x) {
    return std::pair{1.0 - x, -1.0};
  });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, [](double x) {
    double y = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
    return std::pair{y, y * (1.0 - y)};
  });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) {
    double y = std::tanh(x);
    return std::pair{y, 1.0 - y * y};
  });
}

Var gelu(Var a) {
  return unary("gelu", a, [](double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    double u = c * (x + k * x * x * x);
    double th = std::tanh(u);
    double y = 0.5 * x * (1.0 + th);
    double d = 0.5 * (1.0 + th) +
               0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * k * x * x);
    return std::pair{y, d};
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values) s += v;
  return a.tape->record("sum", Tensor::scalar(s), {a},
                        [a](Tape& t, std::size_t self) {
                          double g = t.grad_mut(self)[0];
                          Tensor& ga = t.grad_mut(a.id);
                          for (double& v : ga.values) v += g;
                        });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const auto dt = matrix_dims(table.value(), "gather_rows");
  Tensor out({ids.size(), dt.cols});
  const Tensor& tv = table.value();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= dt.rows) {
      throw IndexError("row id " + std::to_string(ids[r]) +
                       " outside table of " + std::to_string(dt.rows) +
                       " rows");
    }
    std::copy_n(tv.values.begin() + ids[r] * dt.cols, dt.cols,
                out.values.begin() + r * dt.cols);
  }
  auto idx = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  return table.tape->record(
      "gather_rows", std::move(out), {table},
      [table, idx, dt](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_mut(self);
        Tensor& gt = t.grad_mut(table.id);
        for (std::size_t r = 0; r < idx->size(); ++r) {
          const std::size_t base = static_cast<std::size_t>((*idx)[r]) * dt.cols;
          for (std::size_t j = 0; j < dt.cols; ++j)
            gt[base + j] += g[r * dt.cols + j];
        }
      });
}

Var slice_cols(Var a, std::size_t start, std::size_t width) {
  const auto da = matrix_dims(a.value(), "slice_cols");
  if (start + width > da.cols) throw DimensionError("slice_cols out of range");
  Tensor out({da.rows, width});
  const Tensor& av = a.value();
  for (std::size_t r = 0; r < da.rows; ++r)
    std::copy_n(av.values.begin() + r * da.cols + start, width,
                out.values.begin() + r * width);
  return a.tape->record("slice_cols", std::move(out), {a},
                        [a, da, start, width](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_mut(self);
                          Tensor& ga = t.grad_mut(a.id);
                          for (std::size_t r = 0; r < da.rows; ++r)
                            for (std::size_t j = 0; j < width; ++j)
                              ga[r * da.cols + start + j] += g[r * width + j];
                        });
}

Var concat_cols(Var a, Var b) {
  const auto da = matrix_dims(a.value(), "concat_cols");
  const auto db = matrix_dims(b.value(), "concat_cols");
  if (da.rows != db.rows) throw DimensionError("concat_cols row mismatch");
  const std::size_t w = da.cols + db.cols;
  Tensor out({da.rows, w});
  for (std::size_t r = 0; r < da.rows; ++r) {
    std::copy_n(a.value().values.begin() + r * da.cols, da.cols,
                out.values.begin() + r * w);
    std::copy_n(b.value().values.begin() + r * db.cols, db.cols,
                out.values.begin() + r * w + da.cols);
  }
  return a.tape->record(
      "concat_cols", std::move(out), {a, b},
      [a, b, da, db, w](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_mut(self);
        if (t.requires_grad(a.id)) {
          Tensor& ga = t.grad_mut(a.id);
          for (std::size_t r = 0; r < da.rows; ++r)
            for (std::size_t j = 0; j < da.cols; ++j)
              ga[r * da.cols + j] += g[r * w + j];
        }
        if (t.requires_grad(b.id)) {
          Tensor& gb = t.grad_mut(b.id);
          for (std::size_t r = 0; r < db.rows; ++r)
            for (std::size_t j = 0; j < db.cols; ++j)
              gb[r * db.cols + j] += g[r * w + da.cols + j];
        }
      });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const auto da = matrix_dims(a.value(), "slice_rows");
  if (start + count > da.rows) throw DimensionError("slice_rows out of range");
  Tensor out({count, da.cols});
  std::copy_n(a.value().values.begin() + start * da.cols, count * da.cols,
              out.values.begin());
  return a.tape->record("slice_rows", std::move(out), {a},
                        [a, da, start](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_mut(self);
                          Tensor& ga = t.grad_mut(a.id);
                          const std::size_t off = start * da.cols;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[off + i] += g[i];
                        });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_rows of nothing");
  const std::size_t cols = matrix_dims(parts[0].value(), "concat_rows").cols;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    const auto d = matrix_dims(p.value(), "concat_rows");
    if (d.cols != cols) throw DimensionError("concat_rows column mismatch");
    rows += d.rows;
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values.begin(), p.value().values.end(),
              out.values.begin() + off);
    off += p.value().size();
  }
  auto ids = std::make_shared<std::vector<Var>>(parts.begin(), parts.end());
  return parts[0].tape->record(
      "concat_rows", std::move(out), parts, [ids](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_mut(self);
        std::size_t off = 0;
        for (const Var& p : *ids) {
          const std::size_t n = t.value(p.id).size();
          if (t.requires_grad(p.id)) {
            Tensor& gp = t.grad_mut(p.id);
            for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
          }
          off += n;
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be > 0");
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  const std::size_t rows = xv.rows();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm gain/bias width differs from input");
  }
  Tensor y(xv.shape);
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.values.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[r * d + j] = h;
      y[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return x.tape->record(
      "layer_norm", std::move(y), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, d, rows](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_mut(self);
        const Tensor& gv = t.value(gain.id);
        if (t.requires_grad(gain.id)) {
          Tensor& gg = t.grad_mut(gain.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j)
              gg[j] += g[r * d + j] * (*xhat)[r * d + j];
        }
        if (t.requires_grad(bias.id)) {
          Tensor& gb = t.grad_mut(bias.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (t.requires_grad(x.id)) {
          Tensor& gx = t.grad_mut(x.id);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0;
            double mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[r * d + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              gx[r * d + j] += (*inv_std)[r] *
                               (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

Var causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq,
                     std::size_t heads) {
  const auto dq = matrix_dims(q.value(), "causal_attention");
  require_same_shape(q.value(), k.value(), "causal_attention");
  require_same_shape(q.value(), v.value(), "causal_attention");
  if (dq.rows != batch * seq) {
    throw DimensionError("causal_attention rows != batch*seq");
  }
  if (heads == 0 || dq.cols % heads != 0) {
    throw DimensionError("causal_attention width not divisible by heads");
  }
  const std::size_t width = dq.cols;
  const std::size_t hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  // probs[(b*heads + h)*seq*seq + t*seq + s], zero above the diagonal.
  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq);
  Tensor out({dq.rows, width});
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs->data() + (b * heads + h) * seq * seq;
      const std::size_t col = h * hd;
      for (std::size_t t = 0; t < seq; ++t) {
        const double* qr = qv.values.data() + (b * seq + t) * width + col;
        double mx = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* kr = kv.values.data() + (b * seq + s) * width + col;
          double dot = 0.0;
          for (std::size_t j = 0; j < hd; ++j) dot += qr[j] * kr[j];
          p[t * seq + s] = dot * inv_sqrt;
          mx = std::max(mx, p[t * seq + s]);
        }
        double z = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          p[t * seq + s] = std::exp(p[t * seq + s] - mx);
          z += p[t * seq + s];
        }
        double* orow = out.values.data() + (b * seq + t) * width + col;
        for (std::size_t s = 0; s <= t; ++s) {
          p[t * seq + s] /= z;
          const double* vr = vv.values.data() + (b * seq + s) * width + col;
          for (std::size_t j = 0; j < hd; ++j) orow[j] += p[t * seq + s] * vr[j];
        }
      }
    }
  }
  return q.tape->record(
      "causal_attention", std::move(out), {q, k, v},
      [q, k, v, batch, seq, heads, hd, width, inv_sqrt, probs](
          Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_mut(self);
        const Tensor& qv = tp.value(q.id);
        const Tensor& kv = tp.value(k.id);
        const Tensor& vv = tp.value(v.id);
        const bool need_q = tp.requires_grad(q.id);
        const bool need_k = tp.requires_grad(k.id);
        const bool need_v = tp.requires_grad(v.id);
        Tensor* gq = need_q ? &tp.grad_mut(q.id) : nullptr;
        Tensor* gk = need_k ? &tp.grad_mut(k.id) : nullptr;
        Tensor* gv = need_v ? &tp.grad_mut(v.id) : nullptr;
        std::vector<double> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs->data() + (b * heads + h) * seq * seq;
            const std::size_t col = h * hd;
            for (std::size_t t = 0; t < seq; ++t) {
              const std::size_t rt = (b * seq + t) * width + col;
              const double* go = g.values.data() + rt;
              double dot_pdp = 0.0;
              for (std::size_t s = 0; s <= t; ++s) {
                const std::size_t rs = (b * seq + s) * width + col;
                double d = 0.0;
                for (std::size_t j = 0; j < hd; ++j) d += go[j] * vv[rs + j];
                dp[s] = d;
                dot_pdp += p[t * seq + s] * d;
                if (gv) {
                  for (std::size_t j = 0; j < hd; ++j)
                    (*gv)[rs + j] += p[t * seq + s] * go[j];
                }
              }
              for (std::size_t s = 0; s <= t; ++s) {
                const std::size_t rs = (b * seq + s) * width + col;
                const double ds = p[t * seq + s] * (dp[s] - dot_pdp) * inv_sqrt;
                if (gq) {
                  for (std::size_t j = 0; j < hd; ++j)
                    (*gq)[rt + j] += ds * kv[rs + j];
                }
                if (gk) {
                  for (std::size_t j = 0; j < hd; ++j)
                    (*gk)[rs + j] += ds * qv[rt + j];
                }
              }
            }
          }
        }
      });
}

namespace {

void check_targets(const Tensor& logits, std::span<const int> targets,
                   std::span<const std::uint8_t> mask) {
  const auto d = matrix_dims(logits, "cross_entropy");
  if (targets.size() != d.rows || (!mask.empty() && mask.size() != d.rows)) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(d.rows) + " rows");
  }
  for (std::size_t r = 0; r < d.rows; ++r) {
    if (!mask.empty() && mask[r] == 0) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= d.cols) {
      throw IndexError("target " + std::to_string(targets[r]) +
                       " outside vocabulary of " + std::to_string(d.cols));
    }
  }
}

double row_logsumexp(const double* z, std::size_t n) {
  double mx = z[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, z[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(z[j] - mx);
  return mx + std::log(s);
}

}  // namespace

double cross_entropy_sum(const Tensor& logits, std::span<const int> targets,
                         std::span<const std::uint8_t> mask) {
  check_targets(logits, targets, mask);
  const std::size_t v = logits.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (!mask.empty() && mask[r] == 0) continue;
    const double* z = logits.values.data() + r * v;
    total += row_logsumexp(z, v) - z[targets[r]];
  }
  return total;
}

Var cross_entropy(Var logits, std::span<const int> targets,
                  std::span<const std::uint8_t> mask) {
  const Tensor& lv = logits.value();
  check_targets(lv, targets, mask);
  std::size_t count = 0;
  for (std::size_t r = 0; r < targets.size(); ++r)
    if (mask.empty() || mask[r]) ++count;
  if (count == 0) throw UsageError("cross_entropy over zero counted targets");
  const double loss =
      cross_entropy_sum(lv, targets, mask) / static_cast<double>(count);
  auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  auto mk = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  return logits.tape->record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [logits, tg, mk, count](Tape& t, std::size_t self) {
        const double g = t.grad_mut(self)[0] / static_cast<double>(count);
        const Tensor& lv = t.value(logits.id);
        Tensor& gl = t.grad_mut(logits.id);
        const std::size_t v = lv.cols();
        for (std::size_t r = 0; r < tg->size(); ++r) {
          if (!mk->empty() && (*mk)[r] == 0) continue;
          const double* z = lv.values.data() + r * v;
          const double lse = row_logsumexp(z, v);
          double* gr = gl.values.data() + r * v;
          for (std::size_t j = 0; j < v; ++j) gr[j] += g * std::exp(z[j] - lse);
          gr[(*tg)[r]] -= g;
        }
      });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  return cross_entropy(logits, targets, {});
}

}  // namespace fedlm::ad
