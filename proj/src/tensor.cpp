#include "vistrack/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vistrack {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) {
  impl_ = std::make_shared<TensorData>();
  impl_->shape = std::move(shape);
  impl_->values.assign(shape_numel(impl_->shape), fill);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<int>(values.size()))
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  Tensor t;
  t.impl_ = std::make_shared<TensorData>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double& Tensor::at(std::initializer_list<int> idx) {
  int flat = 0;
  int i = 0;
  for (int v : idx) flat = flat * impl_->shape[i++] + v;
  return impl_->values[flat];
}

double Tensor::at(std::initializer_list<int> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

double Tensor::scalar_value() const {
  if (numel() != 1)
    throw std::invalid_argument("scalar_value: tensor has shape " + shape_str(shape()));
  return impl_->values[0];
}

std::vector<double>& Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.clear(); }

// ---- tape ----

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape::Tape() {
  prev_ = g_current_tape;
  g_current_tape = this;
}

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::vector<int> input_ids, Tensor& output, std::function<void()> backward) {
  output.impl_->node_id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{std::move(input_ids), output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  // Intermediate grads are per-call scratch; only leaves accumulate across
  // calls. Dropping output buffers up front also arms the reachability check.
  for (Node& n : nodes_) n.output.clear_grad();
  const_cast<Tensor&>(loss).ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // unreached by the loss
    it->backward();
  }
}

NoTape::NoTape() {
  saved_ = g_current_tape;
  g_current_tape = nullptr;
}

NoTape::~NoTape() { g_current_tape = saved_; }

// ---- op helpers ----

namespace {

void check_same_or_scalar(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1) return;
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

// binary elementwise with scalar broadcast on either side
template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  check_same_or_scalar(name, a, b);
  const Tensor& big = a.numel() >= b.numel() ? a : b;
  Tensor out(big.shape());
  const int n = out.numel();
  const bool sa = a.numel() == 1, sb = b.numel() == 1;
  const double* av = a.data();
  const double* bv = b.data();
  double* ov = out.data();
  for (int i = 0; i < n; ++i) ov[i] = fwd(av[sa ? 0 : i], bv[sb ? 0 : i]);
  if (Tape* tape = Tape::current()) {
    Tensor ac = a, bc = b, oc = out;
    tape->record({a.node_id(), b.node_id()}, out, [ac, bc, oc, bwd, n, sa, sb]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* ga = ac.ensure_grad().data();
      double* gb = bc.ensure_grad().data();
      const double* av2 = ac.data();
      const double* bv2 = bc.data();
      for (int i = 0; i < n; ++i) {
        double da, db;
        bwd(av2[sa ? 0 : i], bv2[sb ? 0 : i], g[i], da, db);
        ga[sa ? 0 : i] += da;
        gb[sb ? 0 : i] += db;
      }
    });
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out(x.shape());
  const int n = out.numel();
  const double* xv = x.data();
  double* ov = out.data();
  for (int i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    tape->record({x.node_id()}, out, [xc, oc, bwd, n]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      const double* xv2 = xc.data();
      const double* ov2 = oc.data();
      double* gx = xc.ensure_grad().data();
      for (int i = 0; i < n; ++i) gx[i] += bwd(xv2[i], ov2[i]) * g[i];
    });
  }
  return out;
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double s) { return s * (1.0 - s); });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary_op(
      x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---- linear algebra / shape ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const double* av = a.data();
  const double* bv = b.data();
  double* ov = out.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aik = av[i * k + p];
      if (aik == 0.0) continue;
      const double* brow = bv + p * n;
      double* orow = ov + i * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  if (Tape* tape = Tape::current()) {
    Tensor ac = a, bc = b, oc = out;
    tape->record({a.node_id(), b.node_id()}, out, [ac, bc, oc, m, k, n]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      const double* av2 = ac.data();
      const double* bv2 = bc.data();
      double* ga = ac.ensure_grad().data();
      double* gb = bc.ensure_grad().data();
      // dA = g . B^T
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g + i * n;
          const double* brow = bv2 + p * n;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      // dB = A^T . g
      for (int i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (int p = 0; p < k; ++p) {
          const double aik = av2[i * k + p];
          if (aik == 0.0) continue;
          double* gbrow = gb + p * n;
          for (int j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
        }
      }
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2)
    throw std::invalid_argument("transpose2d: rank-2 required, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  const double* xv = x.data();
  double* ov = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    tape->record({x.node_id()}, out, [xc, oc, m, n]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* gx = xc.ensure_grad().data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), x.values());
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    tape->record({x.node_id()}, out, [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad();
      auto& gx = xc.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis");
  Shape out_shape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != rank)
      throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && parts[p].dim(d) != out_shape[d])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(parts[p].shape()) +
                                    " vs " + shape_str(out_shape));
    out_shape[axis] += parts[p].dim(axis);
  }
  // outer = product of dims before axis, inner = product after
  int outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[d];

  Tensor out(out_shape);
  double* ov = out.data();
  const int out_axis = out_shape[axis];
  int axis_off = 0;
  for (const Tensor& p : parts) {
    const int pa = p.dim(axis);
    const double* pv = p.data();
    for (int o = 0; o < outer; ++o)
      std::memcpy(ov + (o * out_axis + axis_off) * inner, pv + o * pa * inner,
                  sizeof(double) * pa * inner);
    axis_off += pa;
  }
  if (Tape* tape = Tape::current()) {
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    std::vector<int> ids;
    for (const Tensor& p : parts) ids.push_back(p.node_id());
    tape->record(std::move(ids), out, [pc, oc, outer, inner, out_axis]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      // slice the output grad back into each part
      int axis_off2 = 0;
      for (Tensor& p : pc) {
        const int paxis = p.numel() / (outer * inner);
        double* gp = p.ensure_grad().data();
        for (int o = 0; o < outer; ++o) {
          const double* gsrc = g + (o * out_axis + axis_off2) * inner;
          double* gdst = gp + o * paxis * inner;
          for (int i = 0; i < paxis * inner; ++i) gdst[i] += gsrc[i];
        }
        axis_off2 += paxis;
      }
    });
  }
  return out;
}

Tensor slice1d(const Tensor& x, int start, int len) {
  if (x.rank() != 1 || start < 0 || len < 0 || start + len > x.dim(0))
    throw std::invalid_argument("slice1d: range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") out of " + shape_str(x.shape()));
  Tensor out({len});
  std::memcpy(out.data(), x.data() + start, sizeof(double) * len);
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    tape->record({x.node_id()}, out, [xc, oc, start, len]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* gx = xc.ensure_grad().data();
      for (int i = 0; i < len; ++i) gx[start + i] += g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (int i = 0; i < x.numel(); ++i) acc += x.data()[i];
  Tensor out = Tensor::scalar(acc);
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    tape->record({x.node_id()}, out, [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad()[0];
      auto& gx = xc.ensure_grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor spatial_mean(const Tensor& x) {
  if (x.rank() != 3)
    throw std::invalid_argument("spatial_mean: rank-3 required, got " + shape_str(x.shape()));
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out({c});
  const double* xv = x.data();
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    for (int i = 0; i < hw; ++i) acc += xv[ci * hw + i];
    out.data()[ci] = acc / hw;
  }
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    tape->record({x.node_id()}, out, [xc, oc, c, hw]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* gx = xc.ensure_grad().data();
      for (int ci = 0; ci < c; ++ci) {
        const double gv = g[ci] / hw;
        for (int i = 0; i < hw; ++i) gx[ci * hw + i] += gv;
      }
    });
  }
  return out;
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1)
    throw std::invalid_argument("bias_add: bias must be rank 1, got " + shape_str(b.shape()));
  int rows = 0, cols = 0;
  if (x.rank() == 3) {
    // per-channel: bias index is the leading dim
    if (b.dim(0) != x.dim(0))
      throw std::invalid_argument("bias_add: " + shape_str(x.shape()) + " with bias " +
                                  shape_str(b.shape()));
    rows = x.dim(0);
    cols = x.dim(1) * x.dim(2);
  } else if (x.rank() == 2) {
    // per-column: bias broadcast over rows
    if (b.dim(0) != x.dim(1))
      throw std::invalid_argument("bias_add: " + shape_str(x.shape()) + " with bias " +
                                  shape_str(b.shape()));
    rows = x.dim(0);
    cols = x.dim(1);
  } else if (x.rank() == 1) {
    if (b.dim(0) != x.dim(0))
      throw std::invalid_argument("bias_add: " + shape_str(x.shape()) + " with bias " +
                                  shape_str(b.shape()));
    rows = 1;
    cols = x.dim(0);
  } else {
    throw std::invalid_argument("bias_add: unsupported rank " + shape_str(x.shape()));
  }
  const bool channelwise = x.rank() == 3;
  Tensor out(x.shape());
  const double* xv = x.data();
  const double* bv = b.data();
  double* ov = out.data();
  for (int r = 0; r < rows; ++r)
    for (int c2 = 0; c2 < cols; ++c2)
      ov[r * cols + c2] = xv[r * cols + c2] + bv[channelwise ? r : c2];
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, bc = b, oc = out;
    tape->record({x.node_id(), b.node_id()}, out,
                 [xc, bc, oc, rows, cols, channelwise]() mutable {
                   if (!oc.has_grad()) return;
                   const double* g = oc.grad().data();
                   double* gx = xc.ensure_grad().data();
                   double* gb = bc.ensure_grad().data();
                   for (int r = 0; r < rows; ++r)
                     for (int c2 = 0; c2 < cols; ++c2) {
                       gx[r * cols + c2] += g[r * cols + c2];
                       gb[channelwise ? r : c2] += g[r * cols + c2];
                     }
                 });
  }
  return out;
}

// ---- row-indexed ----

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  if (x.rank() != 2)
    throw std::invalid_argument("gather_rows: rank-2 required, got " + shape_str(x.shape()));
  const int d = x.dim(1);
  Tensor out({static_cast<int>(idx.size()), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= x.dim(0))
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx[r]) + " out of " +
                                  std::to_string(x.dim(0)));
    std::memcpy(out.data() + r * d, x.data() + idx[r] * d, sizeof(double) * d);
  }
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    std::vector<int> ic = idx;
    tape->record({x.node_id()}, out, [xc, oc, ic, d]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* gx = xc.ensure_grad().data();
      for (std::size_t r = 0; r < ic.size(); ++r)
        for (int j = 0; j < d; ++j) gx[ic[r] * d + j] += g[r * d + j];
    });
  }
  return out;
}

Tensor index_add_rows(const Tensor& base, const std::vector<int>& idx, const Tensor& rows) {
  if (base.rank() != 2 || rows.rank() != 2 || base.dim(1) != rows.dim(1) ||
      rows.dim(0) != static_cast<int>(idx.size()))
    throw std::invalid_argument("index_add_rows: base " + shape_str(base.shape()) + ", rows " +
                                shape_str(rows.shape()) + ", " + std::to_string(idx.size()) +
                                " indices");
  const int d = base.dim(1);
  Tensor out = Tensor::from(base.shape(), base.values());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= base.dim(0))
      throw std::invalid_argument("index_add_rows: index " + std::to_string(idx[r]) + " out of " +
                                  std::to_string(base.dim(0)));
    for (int j = 0; j < d; ++j) out.data()[idx[r] * d + j] += rows.data()[r * d + j];
  }
  if (Tape* tape = Tape::current()) {
    Tensor bc = base, rc = rows, oc = out;
    std::vector<int> ic = idx;
    tape->record({base.node_id(), rows.node_id()}, out, [bc, rc, oc, ic, d]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      auto& gb = bc.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
      double* gr = rc.ensure_grad().data();
      for (std::size_t r = 0; r < ic.size(); ++r)
        for (int j = 0; j < d; ++j) gr[r * d + j] += g[ic[r] * d + j];
    });
  }
  return out;
}

Tensor channels_to_rows(const Tensor& x) {
  if (x.rank() != 3)
    throw std::invalid_argument("channels_to_rows: rank-3 required, got " + shape_str(x.shape()));
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out({hw, c});
  const double* xv = x.data();
  double* ov = out.data();
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < hw; ++i) ov[i * c + ci] = xv[ci * hw + i];
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    tape->record({x.node_id()}, out, [xc, oc, c, hw]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* gx = xc.ensure_grad().data();
      for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < hw; ++i) gx[ci * hw + i] += g[i * c + ci];
    });
  }
  return out;
}

Tensor rows_to_channels(const Tensor& x, int h, int w) {
  if (x.rank() != 2 || x.dim(0) != h * w)
    throw std::invalid_argument("rows_to_channels: " + shape_str(x.shape()) + " is not " +
                                std::to_string(h) + "*" + std::to_string(w) + " rows");
  const int c = x.dim(1), hw = h * w;
  Tensor out({c, h, w});
  const double* xv = x.data();
  double* ov = out.data();
  for (int i = 0; i < hw; ++i)
    for (int ci = 0; ci < c; ++ci) ov[ci * hw + i] = xv[i * c + ci];
  if (Tape* tape = Tape::current()) {
    Tensor xc = x, oc = out;
    tape->record({x.node_id()}, out, [xc, oc, c, hw]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* gx = xc.ensure_grad().data();
      for (int i = 0; i < hw; ++i)
        for (int ci = 0; ci < c; ++ci) gx[i * c + ci] += g[ci * hw + i];
    });
  }
  return out;
}

// ---- convolution ----

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  if (input.rank() != 3 || kernel.rank() != 4)
    throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) + ", kernel " +
                                shape_str(kernel.shape()));
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                " input channels, input has " + std::to_string(cin));
  if (kernel.dim(3) != k || k % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be square with odd size, got " +
                                shape_str(kernel.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (h + 2 * pad - k < 0 || w + 2 * pad - k < 0 || oh <= 0 || ow <= 0)
    throw std::invalid_argument("conv2d: nonpositive output size for input " +
                                shape_str(input.shape()) + ", kernel " +
                                shape_str(kernel.shape()) + ", stride " + std::to_string(stride) +
                                ", pad " + std::to_string(pad));
  Tensor out({cout, oh, ow});
  const double* in = input.data();
  const double* ke = kernel.data();
  double* ov = out.data();
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci) {
      const double* kbase = ke + ((co * cin + ci) * k) * k;
      const double* ibase = in + ci * h * w;
      double* obase = ov + co * oh * ow;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double kv = kbase[ky * k + kx];
          if (kv == 0.0) continue;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* irow = ibase + iy * w;
            double* orow = obase + oy * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              orow[ox] += kv * irow[ix];
            }
          }
        }
    }
  if (Tape* tape = Tape::current()) {
    Tensor ic = input, kc = kernel, oc = out;
    tape->record({input.node_id(), kernel.node_id()}, out,
                 [ic, kc, oc, cin, h, w, cout, k, stride, pad, oh, ow]() mutable {
                   if (!oc.has_grad()) return;
                   const double* g = oc.grad().data();
                   const double* in2 = ic.data();
                   const double* ke2 = kc.data();
                   double* gi = ic.ensure_grad().data();
                   double* gk = kc.ensure_grad().data();
                   for (int co = 0; co < cout; ++co)
                     for (int ci2 = 0; ci2 < cin; ++ci2) {
                       const double* kbase = ke2 + ((co * cin + ci2) * k) * k;
                       double* gkbase = gk + ((co * cin + ci2) * k) * k;
                       const double* ibase = in2 + ci2 * h * w;
                       double* gibase = gi + ci2 * h * w;
                       const double* gbase = g + co * oh * ow;
                       for (int ky = 0; ky < k; ++ky)
                         for (int kx = 0; kx < k; ++kx) {
                           const double kv = kbase[ky * k + kx];
                           double gkacc = 0.0;
                           for (int oy = 0; oy < oh; ++oy) {
                             const int iy = oy * stride + ky - pad;
                             if (iy < 0 || iy >= h) continue;
                             const double* irow = ibase + iy * w;
                             double* girow = gibase + iy * w;
                             const double* grow = gbase + oy * ow;
                             for (int ox = 0; ox < ow; ++ox) {
                               const int ix = ox * stride + kx - pad;
                               if (ix < 0 || ix >= w) continue;
                               gkacc += grow[ox] * irow[ix];
                               girow[ix] += grow[ox] * kv;
                             }
                           }
                           gkbase[ky * k + kx] += gkacc;
                         }
                     }
                 });
  }
  return out;
}

// ---- optimizer ----

double clip_gradients(const std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double s = max_norm / norm;
    for (const Tensor& cp : params) {
      Tensor p = cp;
      if (!p.has_grad()) continue;
      for (double& g : p.ensure_grad()) g *= s;
    }
  }
  return norm;
}

void SgdOptimizer::step(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    if (!p.has_grad())
      throw std::runtime_error("sgd_step: parameter with shape " + shape_str(p.shape()) +
                               " has no gradient");
  }
  for (const Tensor& cp : params) {
    Tensor p = cp;
    auto& vel = velocity_[p.impl_.get()];
    if (vel.empty()) vel.assign(p.numel(), 0.0);
    const auto& g = p.grad();
    double* pv = p.data();
    for (int i = 0; i < p.numel(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i];
      pv[i] -= lr_ * vel[i];
    }
    p.zero_grad();
  }
}

// ---- checkpoint ----

namespace {
constexpr char kCheckpointMagic[8] = {'V', 'T', 'R', 'K', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}
}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 8);
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const NamedTensor& np : params) {
    write_u32(os, static_cast<std::uint32_t>(np.name.size()));
    os.write(np.name.data(), static_cast<std::streamsize>(np.name.size()));
    write_u32(os, static_cast<std::uint32_t>(np.tensor.rank()));
    for (int d : np.tensor.shape()) write_u32(os, static_cast<std::uint32_t>(d));
    for (int i = 0; i < np.tensor.numel(); ++i) write_f64(os, np.tensor.data()[i]);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, std::vector<NamedTensor>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = read_u32(is);

  struct Entry {
    Shape shape;
    std::vector<double> values;
  };
  std::unordered_map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(is);
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_u32(is));
    Entry e;
    e.shape = shape;
    e.values.resize(shape_numel(shape));
    for (double& v : e.values) v = read_f64(is);
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
    entries.emplace(std::move(name), std::move(e));
  }
  for (NamedTensor& np : params) {
    auto it = entries.find(np.name);
    if (it == entries.end())
      throw std::runtime_error("load_checkpoint: missing parameter '" + np.name + "' in " + path);
    if (it->second.shape != np.tensor.shape())
      throw std::runtime_error("load_checkpoint: parameter '" + np.name + "' has shape " +
                               shape_str(it->second.shape) + ", expected " +
                               shape_str(np.tensor.shape()));
    np.tensor.values() = it->second.values;
    entries.erase(it);
  }
  if (!entries.empty())
    throw std::runtime_error("load_checkpoint: checkpoint has unknown parameter '" +
                             entries.begin()->first + "'");
}

}  // namespace vistrack
