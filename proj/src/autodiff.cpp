#include "umi/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <fstream>
#include <stdexcept>

#include "umi/rng.hpp"

namespace umi::autodiff {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowC = Eigen::Map<const RowMat>;

Param& ParamStore::add(const std::string& name, ParamRole role, Tensor4 init) {
  if (index_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->role = role;
  p->grad = Tensor4(init.n, init.c, init.h, init.w);
  p->value = std::move(init);
  index_[name] = entries_.size();
  entries_.push_back(std::move(p));
  return *entries_.back();
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return *entries_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return *entries_[it->second];
}

void ParamStore::zero_grads() {
  for (auto& p : entries_)
    std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
}

size_t ParamStore::trainable_scalars() const {
  size_t n = 0;
  for (const auto& p : entries_)
    if (p->trainable()) n += p->value.size();
  return n;
}

int Tape::push(Tensor4 value, std::function<void()> back) {
  nodes_.push_back(Node{std::move(value), Tensor4(), std::move(back)});
  return int(nodes_.size()) - 1;
}

Tensor4& Tape::grad_buf(int node) {
  Node& nd = nodes_[size_t(node)];
  if (nd.grad.size() != nd.value.size())
    nd.grad = Tensor4(nd.value.n, nd.value.c, nd.value.h, nd.value.w);
  return nd.grad;
}

int Tape::constant(Tensor4 x) { return push(std::move(x), nullptr); }

namespace {

// im2col for same-padded k x k cross-correlation: rows are (cin, ky, kx)
// with stride `row_stride`, columns are this sample's output pixels.
void im2colb(const double* in, int c, int h, int w, int k, double* col,
             size_t row_stride) {
  int pad = k / 2;
  size_t hw = size_t(h) * w;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((size_t(ci) * k + ky) * k + kx) * row_stride;
        int dy = ky - pad, dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          int sy = y + dy;
          double* dst = row + size_t(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = in + size_t(ci) * hw + size_t(sy) * w;
          int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          std::fill(dst, dst + x0, 0.0);
          for (int x = x0; x < x1; ++x) dst[x] = src[x + dx];
          std::fill(dst + x1, dst + w, 0.0);
        }
      }
}

void col2im_addb(const double* col, int c, int h, int w, int k,
                 size_t row_stride, double* out) {
  int pad = k / 2;
  size_t hw = size_t(h) * w;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((size_t(ci) * k + ky) * k + kx) * row_stride;
        int dy = ky - pad, dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          double* dst = out + size_t(ci) * hw + size_t(sy) * w;
          const double* src = row + size_t(y) * w;
          int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int x = x0; x < x1; ++x) dst[x + dx] += src[x];
        }
      }
}

} // namespace

int Tape::conv2d(int x, Param& weight, Param& bias) {
  const Tensor4& in = nodes_[size_t(x)].value;
  const Tensor4& wt = weight.value;
  int k = wt.h;
  if ((k != 1 && k != 3) || wt.w != k)
    throw std::invalid_argument("conv2d: kernel must be 3x3 or 1x1");
  if (wt.c != in.c)
    throw std::invalid_argument("conv2d: input channel mismatch");
  if (bias.value.size() != size_t(wt.n))
    throw std::invalid_argument("conv2d: bias size mismatch");

  int cout = wt.n, cin = in.c, h = in.h, w = in.w;
  size_t hw = size_t(h) * w;
  int krows = cin * k * k;

  Tensor4 out(in.n, cout, h, w);
  scratch_.resize(std::max(scratch_.size(), size_t(krows) * hw));
  double* col = scratch_.data();
  MapRowC wmat(wt.v.data(), cout, krows);
  for (int s = 0; s < in.n; ++s) {
    im2colb(&in.v[size_t(s) * cin * hw], cin, h, w, k, col, hw);
    MapRowC cmat(col, krows, long(hw));
    MapRow omat(&out.v[size_t(s) * cout * hw], cout, long(hw));
    omat.noalias() = wmat * cmat;
    for (int co = 0; co < cout; ++co)
      omat.row(co).array() += bias.value.v[size_t(co)];
  }

  int y = push(std::move(out), nullptr);
  nodes_[size_t(y)].back = [this, x, y, &weight, &bias, k]() {
    const Tensor4& in2 = nodes_[size_t(x)].value;
    const Tensor4& g = nodes_[size_t(y)].grad;
    int cout = weight.value.n, cin = in2.c, h = in2.h, w = in2.w;
    size_t hw = size_t(h) * w;
    int krows = cin * k * k;

    Tensor4& dx = grad_buf(x);
    scratch_.resize(std::max(scratch_.size(), 2 * size_t(krows) * hw));
    double* col = scratch_.data();
    double* colg = scratch_.data() + size_t(krows) * hw;
    MapRow dwmat(weight.grad.v.data(), cout, krows);
    MapRowC wmat(weight.value.v.data(), cout, krows);
    for (int s = 0; s < in2.n; ++s) {
      MapRowC gmat(&g.v[size_t(s) * cout * hw], cout, long(hw));
      for (int co = 0; co < cout; ++co)
        bias.grad.v[size_t(co)] += gmat.row(co).sum();
      // weight gradient: g * col^T (col recomputed to bound memory)
      im2colb(&in2.v[size_t(s) * cin * hw], cin, h, w, k, col, hw);
      MapRowC cmat(col, krows, long(hw));
      dwmat.noalias() += gmat * cmat.transpose();
      // input gradient: W^T * g, scattered back
      MapRow cgmat(colg, krows, long(hw));
      cgmat.noalias() = wmat.transpose() * gmat;
      col2im_addb(colg, cin, h, w, k, hw, &dx.v[size_t(s) * cin * hw]);
    }
  };
  return y;
}

int Tape::batch_norm(int x, Param& gamma, Param& beta, Param& running_mean,
                     Param& running_var, Param& count, Mode mode, double eps,
                     double momentum) {
  const Tensor4& in = nodes_[size_t(x)].value;
  int c = in.c;
  if (gamma.value.size() != size_t(c) || beta.value.size() != size_t(c))
    throw std::invalid_argument("batch_norm: affine parameter size mismatch");

  size_t hw = size_t(in.h) * in.w;
  size_t per_channel = size_t(in.n) * hw;

  if (mode == Mode::infer) {
    if (count.value.v[0] < 1.0)
      throw std::logic_error("batch_norm: inference before any training step");
  }
  Tensor4 out(in.n, in.c, in.h, in.w);

  if (mode == Mode::infer) {
    std::vector<double> scale(size_t(c), 0.0), shift(size_t(c), 0.0);
    for (int j = 0; j < c; ++j) {
      double inv = 1.0 / std::sqrt(running_var.value.v[size_t(j)] + eps);
      scale[size_t(j)] = gamma.value.v[size_t(j)] * inv;
      shift[size_t(j)] = beta.value.v[size_t(j)] -
                         running_mean.value.v[size_t(j)] * scale[size_t(j)];
    }
    for (int s = 0; s < in.n; ++s)
      for (int j = 0; j < c; ++j) {
        const double* src = &in.v[(size_t(s) * c + j) * hw];
        double* dst = &out.v[(size_t(s) * c + j) * hw];
        for (size_t i = 0; i < hw; ++i) dst[i] = scale[size_t(j)] * src[i] + shift[size_t(j)];
      }
    int y = push(std::move(out), nullptr);
    nodes_[size_t(y)].back = [this, x, y, &gamma, &beta, &running_mean,
                              &running_var, eps]() {
      const Tensor4& in2 = nodes_[size_t(x)].value;
      const Tensor4& g = nodes_[size_t(y)].grad;
      Tensor4& dx = grad_buf(x);
      int c2 = in2.c;
      size_t hw2 = size_t(in2.h) * in2.w;
      for (int s = 0; s < in2.n; ++s)
        for (int j = 0; j < c2; ++j) {
          double inv = 1.0 / std::sqrt(running_var.value.v[size_t(j)] + eps);
          double sc = gamma.value.v[size_t(j)] * inv;
          const double* gp = &g.v[(size_t(s) * c2 + j) * hw2];
          const double* ip = &in2.v[(size_t(s) * c2 + j) * hw2];
          double* dp = &dx.v[(size_t(s) * c2 + j) * hw2];
          double sum_g = 0.0, sum_gx = 0.0;
          for (size_t i = 0; i < hw2; ++i) {
            dp[i] += gp[i] * sc;
            sum_g += gp[i];
            sum_gx += gp[i] * (ip[i] - running_mean.value.v[size_t(j)]) * inv;
          }
          beta.grad.v[size_t(j)] += sum_g;
          gamma.grad.v[size_t(j)] += sum_gx;
        }
    };
    return y;
  }

  // Train mode: normalize with batch statistics over (batch, h, w).
  if (per_channel < 2)
    throw std::invalid_argument("batch_norm: need batch*h*w >= 2 in train mode");

  std::vector<double> mean(size_t(c), 0.0), var(size_t(c), 0.0), invstd(size_t(c), 0.0);
  for (int s = 0; s < in.n; ++s)
    for (int j = 0; j < c; ++j) {
      const double* src = &in.v[(size_t(s) * c + j) * hw];
      double acc = 0.0;
      for (size_t i = 0; i < hw; ++i) acc += src[i];
      mean[size_t(j)] += acc;
    }
  for (int j = 0; j < c; ++j) mean[size_t(j)] /= double(per_channel);
  for (int s = 0; s < in.n; ++s)
    for (int j = 0; j < c; ++j) {
      const double* src = &in.v[(size_t(s) * c + j) * hw];
      double m = mean[size_t(j)], acc = 0.0;
      for (size_t i = 0; i < hw; ++i) acc += (src[i] - m) * (src[i] - m);
      var[size_t(j)] += acc;
    }
  for (int j = 0; j < c; ++j) {
    var[size_t(j)] /= double(per_channel);
    invstd[size_t(j)] = 1.0 / std::sqrt(var[size_t(j)] + eps);
  }

  auto xhat = std::make_shared<std::vector<double>>(in.size());
  for (int s = 0; s < in.n; ++s)
    for (int j = 0; j < c; ++j) {
      const double* src = &in.v[(size_t(s) * c + j) * hw];
      double* xh = &(*xhat)[(size_t(s) * c + j) * hw];
      double* dst = &out.v[(size_t(s) * c + j) * hw];
      double m = mean[size_t(j)], is = invstd[size_t(j)];
      double ga = gamma.value.v[size_t(j)], be = beta.value.v[size_t(j)];
      for (size_t i = 0; i < hw; ++i) {
        xh[i] = (src[i] - m) * is;
        dst[i] = ga * xh[i] + be;
      }
    }

  // Running statistics (population variance), momentum update.
  for (int j = 0; j < c; ++j) {
    running_mean.value.v[size_t(j)] =
        (1.0 - momentum) * running_mean.value.v[size_t(j)] + momentum * mean[size_t(j)];
    running_var.value.v[size_t(j)] =
        (1.0 - momentum) * running_var.value.v[size_t(j)] + momentum * var[size_t(j)];
  }
  count.value.v[0] += 1.0;

  int y = push(std::move(out), nullptr);
  auto invstd_sp = std::make_shared<std::vector<double>>(std::move(invstd));
  nodes_[size_t(y)].back = [this, x, y, &gamma, &beta, xhat, invstd_sp,
                            per_channel]() {
    const Tensor4& g = nodes_[size_t(y)].grad;
    const Tensor4& in2 = nodes_[size_t(x)].value;
    Tensor4& dx = grad_buf(x);
    int c2 = in2.c;
    size_t hw2 = size_t(in2.h) * in2.w;
    double m = double(per_channel);
    for (int j = 0; j < c2; ++j) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int s = 0; s < in2.n; ++s) {
        const double* gp = &g.v[(size_t(s) * c2 + j) * hw2];
        const double* xh = &(*xhat)[(size_t(s) * c2 + j) * hw2];
        for (size_t i = 0; i < hw2; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * xh[i];
        }
      }
      beta.grad.v[size_t(j)] += sum_g;
      gamma.grad.v[size_t(j)] += sum_gx;
      double ga = gamma.value.v[size_t(j)], is = (*invstd_sp)[size_t(j)];
      for (int s = 0; s < in2.n; ++s) {
        const double* gp = &g.v[(size_t(s) * c2 + j) * hw2];
        const double* xh = &(*xhat)[(size_t(s) * c2 + j) * hw2];
        double* dp = &dx.v[(size_t(s) * c2 + j) * hw2];
        for (size_t i = 0; i < hw2; ++i)
          dp[i] += ga * is / m * (m * gp[i] - sum_g - xh[i] * sum_gx);
      }
    }
  };
  return y;
}

int Tape::leaky_relu(int x, double slope) {
  const Tensor4& in = nodes_[size_t(x)].value;
  Tensor4 out(in.n, in.c, in.h, in.w);
  for (size_t i = 0; i < in.size(); ++i)
    out.v[i] = in.v[i] >= 0.0 ? in.v[i] : slope * in.v[i];
  int y = push(std::move(out), nullptr);
  nodes_[size_t(y)].back = [this, x, y, slope]() {
    const Tensor4& in2 = nodes_[size_t(x)].value;
    const Tensor4& g = nodes_[size_t(y)].grad;
    Tensor4& dx = grad_buf(x);
    for (size_t i = 0; i < in2.size(); ++i)
      dx.v[i] += g.v[i] * (in2.v[i] >= 0.0 ? 1.0 : slope);
  };
  return y;
}

int Tape::max_pool2(int x) {
  const Tensor4& in = nodes_[size_t(x)].value;
  if (in.h % 2 != 0 || in.w % 2 != 0)
    throw std::invalid_argument("max_pool2: spatial dims must be even");
  Tensor4 out(in.n, in.c, in.h / 2, in.w / 2);
  auto argmax = std::make_shared<std::vector<uint32_t>>(out.size());
  size_t o = 0;
  for (int s = 0; s < in.n; ++s)
    for (int j = 0; j < in.c; ++j)
      for (int y2 = 0; y2 < out.h; ++y2)
        for (int x2 = 0; x2 < out.w; ++x2, ++o) {
          double best = -1e308;
          size_t best_i = 0;
          // First strictly greater wins, so ties go to the top-left.
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              size_t i = in.idx(s, j, 2 * y2 + dy, 2 * x2 + dx);
              if (in.v[i] > best) {
                best = in.v[i];
                best_i = i;
              }
            }
          out.v[o] = best;
          (*argmax)[o] = uint32_t(best_i);
        }
  int y = push(std::move(out), nullptr);
  nodes_[size_t(y)].back = [this, x, y, argmax]() {
    const Tensor4& g = nodes_[size_t(y)].grad;
    Tensor4& dx = grad_buf(x);
    for (size_t i = 0; i < g.size(); ++i) dx.v[(*argmax)[i]] += g.v[i];
  };
  return y;
}

namespace {
// align-corners=false mapping for 2x upsampling: output index r reads input
// coordinate (r + 0.5)/2 - 0.5; weights alternate 0.75/0.25.
inline void up2_coords(int r, int n_in, int* i0, int* i1, double* w0) {
  double coord = (r + 0.5) / 2.0 - 0.5;
  int lo = int(std::floor(coord));
  double frac = coord - lo;
  *i0 = std::clamp(lo, 0, n_in - 1);
  *i1 = std::clamp(lo + 1, 0, n_in - 1);
  *w0 = 1.0 - frac;
}
} // namespace

int Tape::bilinear_up2(int x) {
  const Tensor4& in = nodes_[size_t(x)].value;
  Tensor4 out(in.n, in.c, in.h * 2, in.w * 2);
  for (int s = 0; s < in.n; ++s)
    for (int j = 0; j < in.c; ++j)
      for (int y2 = 0; y2 < out.h; ++y2) {
        int r0, r1;
        double wy;
        up2_coords(y2, in.h, &r0, &r1, &wy);
        for (int x2 = 0; x2 < out.w; ++x2) {
          int c0, c1;
          double wx;
          up2_coords(x2, in.w, &c0, &c1, &wx);
          out.at(s, j, y2, x2) = wy * (wx * in.at(s, j, r0, c0) + (1 - wx) * in.at(s, j, r0, c1)) +
                                 (1 - wy) * (wx * in.at(s, j, r1, c0) + (1 - wx) * in.at(s, j, r1, c1));
        }
      }
  int y = push(std::move(out), nullptr);
  nodes_[size_t(y)].back = [this, x, y]() {
    const Tensor4& g = nodes_[size_t(y)].grad;
    const Tensor4& in2 = nodes_[size_t(x)].value;
    Tensor4& dx = grad_buf(x);
    for (int s = 0; s < g.n; ++s)
      for (int j = 0; j < g.c; ++j)
        for (int y2 = 0; y2 < g.h; ++y2) {
          int r0, r1;
          double wy;
          up2_coords(y2, in2.h, &r0, &r1, &wy);
          for (int x2 = 0; x2 < g.w; ++x2) {
            int c0, c1;
            double wx;
            up2_coords(x2, in2.w, &c0, &c1, &wx);
            double gv = g.at(s, j, y2, x2);
            dx.at(s, j, r0, c0) += wy * wx * gv;
            dx.at(s, j, r0, c1) += wy * (1 - wx) * gv;
            dx.at(s, j, r1, c0) += (1 - wy) * wx * gv;
            dx.at(s, j, r1, c1) += (1 - wy) * (1 - wx) * gv;
          }
        }
  };
  return y;
}

int Tape::concat_channels(int a, int b) {
  const Tensor4& ta = nodes_[size_t(a)].value;
  const Tensor4& tb = nodes_[size_t(b)].value;
  if (ta.n != tb.n || ta.h != tb.h || ta.w != tb.w)
    throw std::invalid_argument("concat_channels: batch or spatial dims mismatch");
  Tensor4 out(ta.n, ta.c + tb.c, ta.h, ta.w);
  size_t hw = size_t(ta.h) * ta.w;
  for (int s = 0; s < ta.n; ++s) {
    std::copy_n(&ta.v[size_t(s) * ta.c * hw], size_t(ta.c) * hw,
                &out.v[size_t(s) * out.c * hw]);
    std::copy_n(&tb.v[size_t(s) * tb.c * hw], size_t(tb.c) * hw,
                &out.v[size_t(s) * out.c * hw + size_t(ta.c) * hw]);
  }
  int y = push(std::move(out), nullptr);
  nodes_[size_t(y)].back = [this, a, b, y]() {
    const Tensor4& g = nodes_[size_t(y)].grad;
    Tensor4& da = grad_buf(a);
    Tensor4& db = grad_buf(b);
    size_t hw = size_t(da.h) * da.w;
    for (int s = 0; s < da.n; ++s) {
      const double* src = &g.v[size_t(s) * g.c * hw];
      double* pa = &da.v[size_t(s) * da.c * hw];
      double* pb = &db.v[size_t(s) * db.c * hw];
      for (size_t i = 0; i < size_t(da.c) * hw; ++i) pa[i] += src[i];
      for (size_t i = 0; i < size_t(db.c) * hw; ++i) pb[i] += src[size_t(da.c) * hw + i];
    }
  };
  return y;
}

namespace {
inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
} // namespace

int Tape::mae(int a, int b) {
  const Tensor4& ta = nodes_[size_t(a)].value;
  const Tensor4& tb = nodes_[size_t(b)].value;
  if (!ta.same_shape(tb)) throw std::invalid_argument("mae: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < ta.size(); ++i) acc += std::abs(ta.v[i] - tb.v[i]);
  Tensor4 out(1, 1, 1, 1);
  out.v[0] = acc / double(ta.size());
  int y = push(std::move(out), nullptr);
  nodes_[size_t(y)].back = [this, a, b, y]() {
    const Tensor4& ta2 = nodes_[size_t(a)].value;
    const Tensor4& tb2 = nodes_[size_t(b)].value;
    double g = nodes_[size_t(y)].grad.v[0] / double(ta2.size());
    Tensor4& da = grad_buf(a);
    Tensor4& db = grad_buf(b);
    for (size_t i = 0; i < ta2.size(); ++i) {
      double s = sign0(ta2.v[i] - tb2.v[i]);
      da.v[i] += g * s;
      db.v[i] -= g * s;
    }
  };
  return y;
}

int Tape::mae_const(int a, Tensor4 target) {
  const Tensor4& ta = nodes_[size_t(a)].value;
  if (!ta.same_shape(target)) throw std::invalid_argument("mae_const: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < ta.size(); ++i) acc += std::abs(ta.v[i] - target.v[i]);
  Tensor4 out(1, 1, 1, 1);
  out.v[0] = acc / double(ta.size());
  int y = push(std::move(out), nullptr);
  auto tgt = std::make_shared<Tensor4>(std::move(target));
  nodes_[size_t(y)].back = [this, a, y, tgt]() {
    const Tensor4& ta2 = nodes_[size_t(a)].value;
    double g = nodes_[size_t(y)].grad.v[0] / double(ta2.size());
    Tensor4& da = grad_buf(a);
    for (size_t i = 0; i < ta2.size(); ++i)
      da.v[i] += g * sign0(ta2.v[i] - tgt->v[i]);
  };
  return y;
}

int Tape::mse_const(int a, Tensor4 target) {
  const Tensor4& ta = nodes_[size_t(a)].value;
  if (!ta.same_shape(target)) throw std::invalid_argument("mse_const: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < ta.size(); ++i)
    acc += (ta.v[i] - target.v[i]) * (ta.v[i] - target.v[i]);
  Tensor4 out(1, 1, 1, 1);
  out.v[0] = acc / double(ta.size());
  int y = push(std::move(out), nullptr);
  auto tgt = std::make_shared<Tensor4>(std::move(target));
  nodes_[size_t(y)].back = [this, a, y, tgt]() {
    const Tensor4& ta2 = nodes_[size_t(a)].value;
    double g = 2.0 * nodes_[size_t(y)].grad.v[0] / double(ta2.size());
    Tensor4& da = grad_buf(a);
    for (size_t i = 0; i < ta2.size(); ++i) da.v[i] += g * (ta2.v[i] - tgt->v[i]);
  };
  return y;
}

int Tape::scalar_sum(const std::vector<std::pair<double, int>>& weighted_terms,
                     double constant) {
  double acc = constant;
  for (const auto& [wgt, node] : weighted_terms) acc += wgt * scalar(node);
  Tensor4 out(1, 1, 1, 1);
  out.v[0] = acc;
  int y = push(std::move(out), nullptr);
  auto terms = std::make_shared<std::vector<std::pair<double, int>>>(weighted_terms);
  nodes_[size_t(y)].back = [this, y, terms]() {
    double g = nodes_[size_t(y)].grad.v[0];
    for (const auto& [wgt, node] : *terms) grad_buf(node).v[0] += g * wgt;
  };
  return y;
}

void Tape::backward(int node) {
  if (nodes_[size_t(node)].value.size() != 1)
    throw std::invalid_argument("backward: seed node must be scalar");
  grad_buf(node).v[0] = 1.0;
  for (int i = node; i >= 0; --i) {
    Node& nd = nodes_[size_t(i)];
    if (!nd.back) continue;
    if (nd.grad.size() != nd.value.size()) continue; // no gradient reached this node
    nd.back();
  }
}

GradCheckResult gradient_check(ParamStore& params,
                               const std::function<double(bool)>& loss,
                               double step, size_t max_samples, uint64_t seed) {
  // Snapshot running statistics so repeated train-mode forwards do not
  // leave them perturbed.
  std::vector<std::pair<size_t, Tensor4>> stats_backup;
  for (size_t e = 0; e < params.count(); ++e) {
    const Param& p = params.entry(e);
    if (!p.trainable()) stats_backup.emplace_back(e, p.value);
  }

  params.zero_grads();
  loss(true);

  struct Slot {
    size_t entry;
    size_t offset;
  };
  std::vector<Slot> slots;
  for (size_t e = 0; e < params.count(); ++e) {
    const Param& p = params.entry(e);
    if (!p.trainable()) continue;
    for (size_t i = 0; i < p.value.size(); ++i) slots.push_back({e, i});
  }
  std::vector<double> analytic(slots.size());
  for (size_t i = 0; i < slots.size(); ++i)
    analytic[i] = params.entry(slots[i].entry).grad.v[slots[i].offset];

  std::vector<size_t> chosen(slots.size());
  for (size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
  if (slots.size() > max_samples) {
    Rng rng(hash_combine(seed, 0x9cadc11eULL));
    for (size_t i = 0; i < max_samples; ++i) {
      size_t j = i + size_t(rng.below(uint64_t(chosen.size() - i)));
      std::swap(chosen[i], chosen[j]);
    }
    chosen.resize(max_samples);
  }

  GradCheckResult result;
  result.n_checked = chosen.size();
  for (size_t idx : chosen) {
    double* theta = &params.entry(slots[idx].entry).value.v[slots[idx].offset];
    double saved = *theta;
    double g = analytic[idx];
    // Near-dead axes (e.g. conv biases cancelled by a following batch norm)
    // have a locally flat loss; probe them at a step large enough that the
    // difference rises above double roundoff, matching the 1e-8 floor.
    double h = std::abs(g) <= 1e-6 ? std::max(step, 1e-3) : step;
    *theta = saved + h;
    double lp = loss(false);
    *theta = saved - h;
    double lm = loss(false);
    *theta = saved;
    double fd = (lp - lm) / (2.0 * h);
    double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }

  for (auto& [e, value] : stats_backup) params.entry(e).value = value;
  return result;
}

namespace {

constexpr char kCkptMagic[4] = {'U', 'N', 'C', 'K'};

void put_u32(std::string& out, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.append(b, 4);
}

uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

} // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::string out;
  out.append(kCkptMagic, 4);
  out.push_back(char(1)); // version
  out.append(3, char(0));
  put_u32(out, uint32_t(params.count()));
  for (size_t e = 0; e < params.count(); ++e) {
    const Param& p = params.entry(e);
    put_u32(out, uint32_t(p.name.size()));
    out.append(p.name);
    out.push_back(char(uint8_t(p.role)));
    out.append(3, char(0));
    put_u32(out, uint32_t(p.value.n));
    put_u32(out, uint32_t(p.value.c));
    put_u32(out, uint32_t(p.value.h));
    put_u32(out, uint32_t(p.value.w));
  }
  for (size_t e = 0; e < params.count(); ++e) {
    const Param& p = params.entry(e);
    for (double d : p.value.v) {
      float f = float(d);
      uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(out, u);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const uint8_t* p = reinterpret_cast<const uint8_t*>(raw.data());
  size_t n = raw.size(), pos = 0;
  auto need = [&](size_t k) {
    if (pos + k > n) throw std::runtime_error("checkpoint: truncated file " + path);
  };
  need(12);
  if (std::memcmp(p, kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  if (p[4] != 1) throw std::runtime_error("checkpoint: unsupported version");
  uint32_t count = get_u32(p + 8);
  pos = 12;

  struct Entry {
    std::string name;
    ParamRole role;
    int dims[4];
  };
  std::vector<Entry> table;
  table.reserve(count);
  for (uint32_t e = 0; e < count; ++e) {
    need(4);
    uint32_t len = get_u32(p + pos);
    pos += 4;
    need(len + 20);
    Entry ent;
    ent.name.assign(reinterpret_cast<const char*>(p + pos), len);
    pos += len;
    uint8_t role = p[pos];
    if (role > uint8_t(ParamRole::bn_count))
      throw std::runtime_error("checkpoint: unknown parameter role");
    ent.role = ParamRole(role);
    pos += 4;
    for (int d = 0; d < 4; ++d) {
      ent.dims[d] = int(get_u32(p + pos));
      pos += 4;
    }
    table.push_back(std::move(ent));
  }

  ParamStore store;
  for (const Entry& ent : table) {
    Tensor4 t(ent.dims[0], ent.dims[1], ent.dims[2], ent.dims[3]);
    need(t.size() * 4);
    for (size_t i = 0; i < t.size(); ++i) {
      uint32_t u = get_u32(p + pos);
      pos += 4;
      float fv;
      std::memcpy(&fv, &u, 4);
      t.v[i] = fv;
    }
    store.add(ent.name, ent.role, std::move(t));
  }
  if (pos != n) throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return store;
}

} // namespace umi::autodiff
