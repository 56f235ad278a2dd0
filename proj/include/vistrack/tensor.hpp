#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace vistrack {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  int node_id = -1;          // index into the recording tape, -1 when untracked
};

// Dense row-major 64-bit tensor. Copies share storage, so a parameter handed
// to an op and the caller's handle see the same values and gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[i]; }
  int numel() const { return static_cast<int>(impl_->values.size()); }

  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }
  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }

  // row-major multi-index access, handy in tests and target encoding
  double& at(std::initializer_list<int> idx);
  double at(std::initializer_list<int> idx) const;

  double scalar_value() const;  // numel()==1 only

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<double>& ensure_grad();  // allocates zeros on first use
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad();   // zeroes in place (keeps the buffer)
  void clear_grad();  // drops the buffer entirely

  int node_id() const { return impl_->node_id; }

  std::shared_ptr<TensorData> impl_;
};

// Define-by-run recording tape. Constructing a Tape makes it current for the
// thread; ops record themselves while one is active. Rebuilt every training
// step. Two tapes never share nodes.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::vector<int> input_ids, Tensor& output, std::function<void()> backward);

  // Seeds d(loss)/d(loss)=1 and walks the tape in reverse recording order
  // (reverse topological by construction). Gradients accumulate across calls.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> input_ids;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

// An RAII pause: ops invoked while this is alive are not recorded.
class NoTape {
 public:
  NoTape();
  ~NoTape();
  NoTape(const NoTape&) = delete;

 private:
  Tape* saved_;
};

// ---- elementwise ----
// Binary ops accept equal shapes or a broadcast scalar (numel 1) on either side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor clamp(const Tensor& x, double lo, double hi);  // zero gradient outside (lo, hi)

// ---- linear algebra / shape ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] . [k x n]
Tensor transpose2d(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice1d(const Tensor& x, int start, int len);
Tensor sum(const Tensor& x);                    // -> [1]
Tensor spatial_mean(const Tensor& x);           // [C,H,W] -> [C]
Tensor bias_add(const Tensor& x, const Tensor& b);  // per-channel (rank 3), per-column (rank 2), plain (rank 1)

// ---- row-indexed ops over [n x D] matrices ----
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
Tensor index_add_rows(const Tensor& base, const std::vector<int>& idx, const Tensor& rows);
Tensor channels_to_rows(const Tensor& x);              // [C,H,W] -> [(H*W) x C]
Tensor rows_to_channels(const Tensor& x, int h, int w);  // inverse

// ---- convolution ----
// Cross-correlation, zero padding, odd kernel size.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);

// ---- optimizer ----
// Rescales every gradient by min(1, max_norm / ||g||), where ||g|| is the
// global L2 norm across all listed parameters. Returns the pre-clip norm.
// Parameters without gradients are skipped.
double clip_gradients(const std::vector<Tensor>& params, double max_norm);

// v <- momentum*v + grad; p <- p - lr*v; grads zeroed afterwards.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step(const std::vector<Tensor>& params);

 private:
  double lr_;
  double momentum_;
  std::unordered_map<const TensorData*, std::vector<double>> velocity_;
};

// ---- checkpoint ----
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Binary format: magic, version, count, then per parameter its name, shape and
// raw little-endian 64-bit values. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params);
void load_checkpoint(const std::string& path, std::vector<NamedTensor>& params);

}  // namespace vistrack
