#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace umi::autodiff {

// Dense NCHW tensor of doubles.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(size_t(n_) * c_ * h_ * w_, 0.0) {}

  size_t size() const { return size_t(n) * c * h * w; }
  size_t idx(int i, int j, int y, int x) const {
    return ((size_t(i) * c + j) * h + y) * w + x;
  }
  double& at(int i, int j, int y, int x) { return v[idx(i, j, y, x)]; }
  double at(int i, int j, int y, int x) const { return v[idx(i, j, y, x)]; }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

enum class ParamRole : uint8_t {
  weight = 0,
  bias = 1,
  bn_gamma = 2,
  bn_beta = 3,
  bn_running_mean = 4,
  bn_running_var = 5,
  bn_count = 6, // batches seen; guards inference before training
};

struct Param {
  std::string name;
  ParamRole role = ParamRole::weight;
  Tensor4 value;
  Tensor4 grad;

  bool trainable() const {
    return role == ParamRole::weight || role == ParamRole::bias ||
           role == ParamRole::bn_gamma || role == ParamRole::bn_beta;
  }
};

// Named parameters with paired gradient slots; iteration order is the
// insertion order and stays stable.
class ParamStore {
 public:
  Param& add(const std::string& name, ParamRole role, Tensor4 init);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  size_t count() const { return entries_.size(); }
  Param& entry(size_t i) { return *entries_[i]; }
  const Param& entry(size_t i) const { return *entries_[i]; }
  void zero_grads();
  size_t trainable_scalars() const;

 private:
  std::vector<std::unique_ptr<Param>> entries_;
  std::map<std::string, size_t> index_;
};

enum class Mode { train, infer };

// Reverse-mode tape. Build a graph per forward pass, then call backward()
// on a scalar node; parameter gradients accumulate additively into the
// store, node gradients into the tape.
class Tape {
 public:
  int constant(Tensor4 x);

  // 3x3 or 1x1 cross-correlation with zero same-padding.
  int conv2d(int x, Param& weight, Param& bias);
  int batch_norm(int x, Param& gamma, Param& beta, Param& running_mean,
                 Param& running_var, Param& count, Mode mode,
                 double eps = 1e-5, double momentum = 0.1);
  int leaky_relu(int x, double slope);
  int max_pool2(int x); // 2x2 stride 2; gradient to the first argmax
  int bilinear_up2(int x); // align-corners = false
  int concat_channels(int a, int b);

  // Scalar nodes (shape 1x1x1x1).
  int mae(int a, int b);
  int mae_const(int a, Tensor4 target);
  int mse_const(int a, Tensor4 target);
  int scalar_sum(const std::vector<std::pair<double, int>>& weighted_terms,
                 double constant = 0.0);

  void backward(int node);

  const Tensor4& value(int node) const { return nodes_[size_t(node)].value; }
  const Tensor4& grad(int node) const { return nodes_[size_t(node)].grad; }
  double scalar(int node) const { return nodes_[size_t(node)].value.v[0]; }

 private:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  std::vector<double> scratch_; // reused im2col workspace

  int push(Tensor4 value, std::function<void()> back);
  Tensor4& grad_buf(int node);
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t n_checked = 0;
};

// Central finite differences on trainable parameters against the gradients
// that `loss(true)` accumulates into the store. `loss(false)` must evaluate
// the same loss without touching gradients. When the parameter count
// exceeds max_samples, a seeded random subsample is checked. Batch-norm
// running statistics are restored afterwards.
GradCheckResult gradient_check(ParamStore& params,
                               const std::function<double(bool)>& loss,
                               double step = 1e-3, size_t max_samples = 200,
                               uint64_t seed = 0);

// Flat binary checkpoint: a name/shape/role table followed by all values
// as IEEE-754 32-bit little-endian, running statistics included.
void save_checkpoint(const ParamStore& params, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

} // namespace umi::autodiff
