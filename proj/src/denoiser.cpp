#include "umi/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace umi::denoiser {

using autodiff::Param;
using autodiff::ParamRole;

namespace {

struct ChannelPlan {
  std::vector<int> enc_in, enc_out; // per encoder level
  int bottleneck_in = 0, bottleneck_out = 0;
  std::vector<int> dec_in, dec_out; // per decoder level, index = level
};

ChannelPlan plan_channels(const UNetConfig& cfg) {
  if (cfg.levels < 1) throw std::invalid_argument("UNetConfig: levels must be >= 1");
  if (cfg.base_channels < 1)
    throw std::invalid_argument("UNetConfig: base_channels must be >= 1");
  ChannelPlan p;
  for (int i = 0; i < cfg.levels; ++i) {
    int out = cfg.base_channels << i;
    int in = i == 0 ? cfg.in_channels : (cfg.base_channels << (i - 1));
    p.enc_in.push_back(in);
    p.enc_out.push_back(out);
  }
  p.bottleneck_in = cfg.base_channels << (cfg.levels - 1);
  p.bottleneck_out = cfg.base_channels << cfg.levels;
  for (int i = 0; i < cfg.levels; ++i) {
    int skip = cfg.base_channels << i;
    int up = cfg.base_channels << (i + 1);
    p.dec_in.push_back(up + skip);
    p.dec_out.push_back(skip);
  }
  return p;
}

void add_conv(ParamStore& store, Rng& rng, const std::string& prefix, int cin,
              int cout, int k, double leaky_slope) {
  Tensor4 w(cout, cin, k, k);
  double fan_in = double(cin) * k * k;
  double stddev = std::sqrt(2.0 / ((1.0 + leaky_slope * leaky_slope) * fan_in));
  for (double& v : w.v) v = stddev * rng.normal();
  store.add(prefix + ".weight", ParamRole::weight, std::move(w));
  store.add(prefix + ".bias", ParamRole::bias, Tensor4(1, cout, 1, 1));
}

void add_bn(ParamStore& store, const std::string& prefix, int c) {
  Tensor4 gamma(1, c, 1, 1);
  std::fill(gamma.v.begin(), gamma.v.end(), 1.0);
  store.add(prefix + ".gamma", ParamRole::bn_gamma, std::move(gamma));
  store.add(prefix + ".beta", ParamRole::bn_beta, Tensor4(1, c, 1, 1));
  store.add(prefix + ".running_mean", ParamRole::bn_running_mean, Tensor4(1, c, 1, 1));
  Tensor4 rv(1, c, 1, 1);
  std::fill(rv.v.begin(), rv.v.end(), 1.0);
  store.add(prefix + ".running_var", ParamRole::bn_running_var, std::move(rv));
  store.add(prefix + ".count", ParamRole::bn_count, Tensor4(1, 1, 1, 1));
}

void add_block(ParamStore& store, Rng& rng, const std::string& prefix, int cin,
               int cout, double slope) {
  add_conv(store, rng, prefix + ".conv0", cin, cout, 3, slope);
  add_bn(store, prefix + ".bn0", cout);
  add_conv(store, rng, prefix + ".conv1", cout, cout, 3, slope);
  add_bn(store, prefix + ".bn1", cout);
}

// conv -> bn -> leaky relu, twice.
int tape_block(Tape& tape, ParamStore& params, const std::string& prefix, int x,
               Mode mode, double slope) {
  for (int i = 0; i < 2; ++i) {
    std::string conv = prefix + ".conv" + std::to_string(i);
    std::string bn = prefix + ".bn" + std::to_string(i);
    x = tape.conv2d(x, params.at(conv + ".weight"), params.at(conv + ".bias"));
    x = tape.batch_norm(x, params.at(bn + ".gamma"), params.at(bn + ".beta"),
                        params.at(bn + ".running_mean"), params.at(bn + ".running_var"),
                        params.at(bn + ".count"), mode);
    x = tape.leaky_relu(x, slope);
  }
  return x;
}

} // namespace

ParamStore init_unet_params(const UNetConfig& cfg, uint64_t seed) {
  ChannelPlan plan = plan_channels(cfg);
  ParamStore store;
  Rng rng(hash_combine(seed, 0x0172a1ULL));
  for (int i = 0; i < cfg.levels; ++i)
    add_block(store, rng, "enc" + std::to_string(i), plan.enc_in[size_t(i)],
              plan.enc_out[size_t(i)], cfg.leaky_slope);
  add_block(store, rng, "bottleneck", plan.bottleneck_in, plan.bottleneck_out,
            cfg.leaky_slope);
  for (int i = cfg.levels - 1; i >= 0; --i)
    add_block(store, rng, "dec" + std::to_string(i), plan.dec_in[size_t(i)],
              plan.dec_out[size_t(i)], cfg.leaky_slope);
  add_conv(store, rng, "final", cfg.base_channels, cfg.out_channels, 1, cfg.leaky_slope);
  return store;
}

size_t unet_learnable_count(const UNetConfig& cfg) {
  ChannelPlan plan = plan_channels(cfg);
  auto block = [](int cin, int cout) {
    // two convs with bias plus two batch norms (gamma, beta)
    return size_t(cout) * cin * 9 + cout + size_t(cout) * cout * 9 + cout +
           4 * size_t(cout);
  };
  size_t n = 0;
  for (int i = 0; i < cfg.levels; ++i)
    n += block(plan.enc_in[size_t(i)], plan.enc_out[size_t(i)]);
  n += block(plan.bottleneck_in, plan.bottleneck_out);
  for (int i = 0; i < cfg.levels; ++i)
    n += block(plan.dec_in[size_t(i)], plan.dec_out[size_t(i)]);
  n += size_t(cfg.out_channels) * cfg.base_channels + cfg.out_channels;
  return n;
}

int unet_forward_tape(Tape& tape, const UNetConfig& cfg, ParamStore& params,
                      int input_node, Mode mode) {
  const Tensor4& in = tape.value(input_node);
  int div = 1 << cfg.levels;
  if (in.h % div != 0 || in.w % div != 0)
    throw std::invalid_argument("unet_forward: spatial dims must be divisible by 2^levels");
  if (in.c != cfg.in_channels)
    throw std::invalid_argument("unet_forward: input channel mismatch");

  std::vector<int> skips;
  int x = input_node;
  for (int i = 0; i < cfg.levels; ++i) {
    x = tape_block(tape, params, "enc" + std::to_string(i), x, mode, cfg.leaky_slope);
    skips.push_back(x);
    x = tape.max_pool2(x);
  }
  x = tape_block(tape, params, "bottleneck", x, mode, cfg.leaky_slope);
  for (int i = cfg.levels - 1; i >= 0; --i) {
    x = tape.bilinear_up2(x);
    x = tape.concat_channels(skips[size_t(i)], x);
    x = tape_block(tape, params, "dec" + std::to_string(i), x, mode, cfg.leaky_slope);
  }
  x = tape.conv2d(x, params.at("final.weight"), params.at("final.bias"));
  return x;
}

Tensor4 unet_forward(const UNetConfig& cfg, ParamStore& params, const Tensor4& x,
                     Mode mode) {
  Tape tape;
  int out = unet_forward_tape(tape, cfg, params, tape.constant(x), mode);
  return tape.value(out);
}

double ha2ha_loss(const Tensor4& o1, const Tensor4& o2, const Tensor4& y1,
                  const Tensor4& y2, double lambda_c) {
  if (!o1.same_shape(o2) || !o1.same_shape(y1) || !o1.same_shape(y2))
    throw std::invalid_argument("ha2ha_loss: shape mismatch");
  if (lambda_c < 0.0 || lambda_c > 1.0)
    throw std::invalid_argument("ha2ha_loss: lambda_c must be in [0, 1]");
  double n = double(o1.size());
  double f = 0.0, r = 0.0, c = 0.0;
  for (size_t i = 0; i < o1.size(); ++i) {
    f += std::abs(o1.v[i] - y2.v[i]);
    r += std::abs(o2.v[i] - y1.v[i]);
    c += std::abs(o1.v[i] - o2.v[i]);
  }
  return (f / n + r / n + lambda_c * (c / n)) / (2.0 + lambda_c);
}

double param_l1(const ParamStore& params) {
  double acc = 0.0;
  for (size_t e = 0; e < params.count(); ++e) {
    const Param& p = params.entry(e);
    if (p.role != ParamRole::weight) continue;
    for (double v : p.value.v) acc += std::abs(v);
  }
  return acc;
}

double total_loss(double ha2ha, const ParamStore& params, double lambda_l1) {
  if (lambda_l1 < 0.0) throw std::invalid_argument("total_loss: lambda_l1 must be >= 0");
  return ha2ha + lambda_l1 * param_l1(params);
}

void adamw_step(ParamStore& params, AdamState& state, int t, const AdamConfig& cfg) {
  if (t < 1) throw std::invalid_argument("adamw_step: t must be >= 1");
  if (state.m.size() != params.count()) {
    state.m.resize(params.count());
    state.v.resize(params.count());
    for (size_t e = 0; e < params.count(); ++e) {
      const Tensor4& val = params.entry(e).value;
      state.m[e] = Tensor4(val.n, val.c, val.h, val.w);
      state.v[e] = Tensor4(val.n, val.c, val.h, val.w);
    }
  }
  double bc1 = 1.0 - std::pow(cfg.beta1, t);
  double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (size_t e = 0; e < params.count(); ++e) {
    Param& p = params.entry(e);
    if (!p.trainable()) continue;
    double* m = state.m[e].v.data();
    double* v = state.v[e].v.data();
    for (size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad.v[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p.value.v[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                cfg.weight_decay * p.value.v[i]);
    }
  }
}

double plateau_step(PlateauState& state, double epoch_loss, double factor,
                    int patience, double rel_tol, double lr_floor) {
  if (!state.seen_any) {
    state.best = epoch_loss;
    state.bad_epochs = 1; // the baseline epoch has not improved anything yet
    state.seen_any = true;
  } else if (epoch_loss < state.best * (1.0 - rel_tol)) {
    state.best = epoch_loss;
    state.bad_epochs = 0;
  } else {
    state.bad_epochs += 1;
  }
  if (state.bad_epochs >= patience) {
    state.lr = std::max(lr_floor, state.lr * factor);
    state.bad_epochs = 0;
  }
  return state.lr;
}

double robust_scale(const double* values, size_t count) {
  if (count == 0) return 1e-12;
  std::vector<double> mag(count);
  for (size_t i = 0; i < count; ++i) mag[i] = std::abs(values[i]);
  size_t rank = size_t(std::ceil(0.99 * double(count)));
  rank = std::min(std::max<size_t>(rank, 1), count) - 1;
  std::nth_element(mag.begin(), mag.begin() + std::ptrdiff_t(rank), mag.end());
  return std::max(mag[rank], 1e-12);
}

PairedPatchSet build_pairs(const RfEnsemble& y1, const RfEnsemble& y2,
                           int patch_size, int frame_stride) {
  if (y1.n_time != y2.n_time || y1.n_axial != y2.n_axial ||
      y1.n_lateral != y2.n_lateral)
    throw std::invalid_argument("build_pairs: ensemble dims mismatch");
  if (patch_size < 1) throw std::invalid_argument("build_pairs: patch size must be >= 1");
  if (frame_stride < 1) throw std::invalid_argument("build_pairs: frame stride must be >= 1");
  if (y1.n_axial < patch_size || y1.n_lateral < patch_size)
    throw std::invalid_argument("build_pairs: frame smaller than one patch");

  PairedPatchSet out;
  size_t per_patch = size_t(patch_size) * patch_size;
  for (int t = 0; t < y1.n_time; t += frame_stride)
    for (int z0 = 0; z0 + patch_size <= y1.n_axial; z0 += patch_size)
      for (int x0 = 0; x0 + patch_size <= y1.n_lateral; x0 += patch_size) {
        PatchPair pair;
        pair.h = pair.w = patch_size;
        pair.frame_id = t;
        pair.off_axial = z0;
        pair.off_lateral = x0;
        pair.a.resize(per_patch);
        pair.b.resize(per_patch);
        for (int r = 0; r < patch_size; ++r)
          for (int c = 0; c < patch_size; ++c) {
            pair.a[size_t(r) * patch_size + c] = y1.at(t, z0 + r, x0 + c);
            pair.b[size_t(r) * patch_size + c] = y2.at(t, z0 + r, x0 + c);
          }
        std::vector<double> both;
        both.reserve(2 * per_patch);
        both.insert(both.end(), pair.a.begin(), pair.a.end());
        both.insert(both.end(), pair.b.begin(), pair.b.end());
        pair.scale = robust_scale(both.data(), both.size());
        double inv = 1.0 / pair.scale;
        for (double& v : pair.a) v *= inv;
        for (double& v : pair.b) v *= inv;
        out.push_back(std::move(pair));
      }
  return out;
}

namespace {

void apply_transform(std::vector<double>& img, int h, int w, uint8_t code) {
  std::vector<double> tmp(img.size());
  auto src = [&](int r, int c) { return img[size_t(r) * w + c]; };
  switch (code) {
    case 0:
      return;
    case 1: // horizontal flip
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) tmp[size_t(r) * w + c] = src(r, w - 1 - c);
      break;
    case 2: // vertical flip
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) tmp[size_t(r) * w + c] = src(h - 1 - r, c);
      break;
    case 3: // 180 degrees
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) tmp[size_t(r) * w + c] = src(h - 1 - r, w - 1 - c);
      break;
    case 4: // 90 degrees clockwise (square only)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) tmp[size_t(c) * w + (h - 1 - r)] = src(r, c);
      break;
    case 5: // 270 degrees clockwise
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) tmp[size_t(w - 1 - c) * w + r] = src(r, c);
      break;
    default:
      throw std::invalid_argument("augment: unknown transform code");
  }
  img = std::move(tmp);
}

} // namespace

PatchPair augment(const PatchPair& pair, Rng& rng, bool allow_rot90) {
  if (allow_rot90 && pair.h != pair.w)
    throw std::invalid_argument("augment: 90 degree rotations need square patches");
  int n_choices = allow_rot90 ? 6 : 4;
  uint8_t code = uint8_t(rng.below(uint64_t(n_choices)));
  PatchPair out = pair;
  apply_transform(out.a, out.h, out.w, code);
  apply_transform(out.b, out.h, out.w, code);
  out.aug_applied = code;
  return out;
}

TrainResult train(const PairedPatchSet& dataset, const UNetConfig& unet_cfg,
                  const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  if (cfg.lambda_c < 0.0 || cfg.lambda_c > 1.0)
    throw std::invalid_argument("train: lambda_c must be in [0, 1]");
  if (cfg.batch_size < 1 || cfg.max_epochs < 1 || !(cfg.lr > 0.0) ||
      cfg.plateau_patience < 1)
    throw std::invalid_argument("train: invalid configuration");

  TrainResult result;
  result.params = init_unet_params(unet_cfg, cfg.seed);
  ParamStore& params = result.params;

  AdamState adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.beta1 = cfg.beta1;
  adam_cfg.beta2 = cfg.beta2;
  adam_cfg.weight_decay = cfg.weight_decay;

  PlateauState plateau;
  plateau.lr = cfg.lr;

  int patch_h = dataset[0].h, patch_w = dataset[0].w;
  double norm = 2.0 + cfg.lambda_c;
  int step = 0;

  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(hash_combine(cfg.seed, 0x5c0ffeULL, uint64_t(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(shuffle_rng.below(i))]);
    Rng aug_rng(hash_combine(cfg.seed, 0xa69ULL, uint64_t(epoch)));

    double epoch_loss = 0.0;
    size_t epoch_samples = 0;
    for (size_t begin = 0; begin < order.size(); begin += size_t(cfg.batch_size)) {
      size_t bs = std::min(size_t(cfg.batch_size), order.size() - begin);
      Tensor4 ya(int(bs), 1, patch_h, patch_w), yb(int(bs), 1, patch_h, patch_w);
      for (size_t s = 0; s < bs; ++s) {
        const PatchPair& base = dataset[order[begin + s]];
        if (base.h != patch_h || base.w != patch_w)
          throw std::invalid_argument("train: inconsistent patch shapes");
        PatchPair sample = cfg.augment ? augment(base, aug_rng, cfg.augment_rot90) : base;
        std::copy(sample.a.begin(), sample.a.end(), ya.v.begin() + std::ptrdiff_t(s * sample.a.size()));
        std::copy(sample.b.begin(), sample.b.end(), yb.v.begin() + std::ptrdiff_t(s * sample.b.size()));
      }

      Tape tape;
      int n1 = tape.constant(ya);
      int n2 = tape.constant(yb);
      int o1 = unet_forward_tape(tape, unet_cfg, params, n1, Mode::train);
      int o2 = unet_forward_tape(tape, unet_cfg, params, n2, Mode::train);
      int loss_node = tape.scalar_sum({{1.0 / norm, tape.mae_const(o1, yb)},
                                       {1.0 / norm, tape.mae_const(o2, ya)},
                                       {cfg.lambda_c / norm, tape.mae(o1, o2)}});
      double batch_total = tape.scalar(loss_node) + cfg.lambda_l1 * param_l1(params);
      if (!std::isfinite(batch_total))
        throw std::runtime_error("train: loss diverged (non-finite)");

      params.zero_grads();
      tape.backward(loss_node);
      if (cfg.lambda_l1 > 0.0) {
        for (size_t e = 0; e < params.count(); ++e) {
          Param& p = params.entry(e);
          if (p.role != ParamRole::weight) continue;
          for (size_t i = 0; i < p.value.size(); ++i) {
            double w = p.value.v[i];
            p.grad.v[i] += cfg.lambda_l1 * (w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0));
          }
        }
      }
      adam_cfg.lr = plateau.lr;
      adamw_step(params, adam, ++step, adam_cfg);

      epoch_loss += batch_total * double(bs);
      epoch_samples += bs;
    }

    double mean_loss = epoch_loss / double(epoch_samples);
    result.history.push_back({epoch, plateau.lr, mean_loss});
    plateau_step(plateau, mean_loss, cfg.plateau_factor, cfg.plateau_patience,
                 cfg.plateau_rel_tol, cfg.lr_floor);
  }
  return result;
}

namespace {
int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}
} // namespace

std::vector<double> denoise_frame(const UNetConfig& cfg, ParamStore& params,
                                  const std::vector<double>& frame, int h, int w) {
  if (frame.size() != size_t(h) * w)
    throw std::invalid_argument("denoise_frame: buffer size mismatch");
  double scale = robust_scale(frame.data(), frame.size());
  int div = 1 << cfg.levels;
  int ph = (h + div - 1) / div * div;
  int pw = (w + div - 1) / div * div;

  Tensor4 x(1, 1, ph, pw);
  for (int r = 0; r < ph; ++r) {
    int sr = reflect101(r, h);
    for (int c = 0; c < pw; ++c)
      x.v[size_t(r) * pw + c] = frame[size_t(sr) * w + reflect101(c, w)] / scale;
  }
  Tensor4 y = unet_forward(cfg, params, x, Mode::infer);
  std::vector<double> out(size_t(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out[size_t(r) * w + c] = y.v[size_t(r) * pw + c] * scale;
  return out;
}

RfEnsemble denoise_ensemble(const UNetConfig& cfg, ParamStore& params,
                            const RfEnsemble& ens) {
  RfEnsemble out = ens;
  size_t frame_px = size_t(ens.n_axial) * ens.n_lateral;
  std::vector<double> frame(frame_px);
  for (int t = 0; t < ens.n_time; ++t) {
    std::copy_n(&ens.samples[size_t(t) * frame_px], frame_px, frame.begin());
    std::vector<double> dn = denoise_frame(cfg, params, frame, ens.n_axial, ens.n_lateral);
    std::copy(dn.begin(), dn.end(), out.samples.begin() + std::ptrdiff_t(t * frame_px));
  }
  return out;
}

UNetConfig infer_unet_config(const ParamStore& params) {
  UNetConfig cfg;
  const Tensor4& first = params.at("enc0.conv0.weight").value;
  cfg.base_channels = first.n;
  cfg.in_channels = first.c;
  cfg.out_channels = params.at("final.weight").value.n;
  int levels = 0;
  while (params.has("enc" + std::to_string(levels) + ".conv0.weight")) ++levels;
  cfg.levels = levels;
  return cfg;
}

} // namespace umi::denoiser
