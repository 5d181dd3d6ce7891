#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "umi/autodiff.hpp"
#include "umi/rng.hpp"
#include "umi/types.hpp"

namespace umi::denoiser {

using autodiff::Mode;
using autodiff::ParamStore;
using autodiff::Tape;
using autodiff::Tensor4;

// Encoder-decoder U-Net: `levels` encoder stages of two (conv3x3, batch
// norm, leaky ReLU) blocks with 2x2 max pooling between stages, a double-
// conv bottleneck, bilinear upsampling with skip concatenation on the way
// up, and a linear 1x1 output conv. Channels double per level from
// `base_channels`.
struct UNetConfig {
  int levels = 4;
  int base_channels = 16;
  int in_channels = 1;
  int out_channels = 1;
  double leaky_slope = 0.1;
};

ParamStore init_unet_params(const UNetConfig& cfg, uint64_t seed);

// Number of learnable scalars (conv kernels and biases, batch-norm gamma
// and beta; running statistics excluded).
size_t unet_learnable_count(const UNetConfig& cfg);

// Forward pass on the tape; spatial dims must be divisible by 2^levels.
int unet_forward_tape(Tape& tape, const UNetConfig& cfg, ParamStore& params,
                      int input_node, Mode mode);
Tensor4 unet_forward(const UNetConfig& cfg, ParamStore& params,
                     const Tensor4& x, Mode mode);

// (MAE(o1,y2) + MAE(o2,y1) + lambda_c MAE(o1,o2)) / (2 + lambda_c).
double ha2ha_loss(const Tensor4& o1, const Tensor4& o2, const Tensor4& y1,
                  const Tensor4& y2, double lambda_c);

// Sum of |theta| over weight-role parameters only (biases, batch-norm
// affine and running statistics excluded).
double param_l1(const ParamStore& params);

double total_loss(double ha2ha, const ParamStore& params, double lambda_l1);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 0.0; // decoupled
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor4> m, v; // indexed like the store entries
};

// One decoupled-weight-decay Adam step over all trainable parameters;
// t is the 1-based step count used for bias correction.
void adamw_step(ParamStore& params, AdamState& state, int t, const AdamConfig& cfg);

// Reduce-on-plateau state. The first observed epoch initializes the best
// loss and starts the plateau counter; an epoch improves only when it beats
// the best by the relative tolerance. After `patience` consecutive
// non-improving epochs the rate halves (times `factor`) and the counter
// resets, with a hard floor.
struct PlateauState {
  double lr = 1e-4;
  double best = 0.0;
  int bad_epochs = 0;
  bool seen_any = false;
};

double plateau_step(PlateauState& state, double epoch_loss, double factor = 0.5,
                    int patience = 10, double rel_tol = 1e-4,
                    double lr_floor = 1e-6);

struct TrainConfig {
  double lambda_c = 0.5;
  double lambda_l1 = 1e-5;
  int batch_size = 16;     // paper scale: 256
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  double plateau_rel_tol = 1e-4;
  double lr_floor = 1e-6;
  int max_epochs = 30;
  int patch = 64;          // paper scale: 128; stride equals patch
  bool augment = true;
  bool augment_rot90 = false; // RF is anisotropic; opt-in
  uint64_t seed = 1;
};

// One training sample: two same-shape patches sharing a normalization
// scale, plus provenance.
struct PatchPair {
  int h = 0, w = 0;
  std::vector<double> a, b;
  double scale = 1.0;
  int frame_id = 0, off_axial = 0, off_lateral = 0;
  uint8_t aug_applied = 0; // transform code from augment()
};

using PairedPatchSet = std::vector<PatchPair>;

// Tiles every `frame_stride`-th frame into non-overlapping patch pairs
// (partial border tiles discarded). Each pair is divided by a shared scale:
// the 99th percentile of |values| over both patches, floored at 1e-12.
PairedPatchSet build_pairs(const RfEnsemble& y1, const RfEnsemble& y2,
                           int patch_size, int frame_stride);

// Applies one transform, drawn uniformly, to BOTH patches: identity,
// horizontal flip, vertical flip or 180 degree rotation; 90/270 degree
// rotations join the pool when allow_rot90 is set (square patches only).
PatchPair augment(const PatchPair& pair, Rng& rng, bool allow_rot90 = false);

struct EpochStat {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochStat> history;
};

// Seeded-shuffle mini-batch training with the composite loss and AdamW;
// aborts on non-finite loss. Deterministic for a given seed.
TrainResult train(const PairedPatchSet& dataset, const UNetConfig& unet_cfg,
                  const TrainConfig& cfg);

// Frame-wise inference: normalize by the frame's own 99th percentile,
// reflect-pad to a multiple of 2^levels, run in inference mode, crop and
// restore the scale.
std::vector<double> denoise_frame(const UNetConfig& cfg, ParamStore& params,
                                  const std::vector<double>& frame, int h, int w);
RfEnsemble denoise_ensemble(const UNetConfig& cfg, ParamStore& params,
                            const RfEnsemble& ens);

// 99th percentile of absolute values (nearest-rank), floored at 1e-12.
double robust_scale(const double* values, size_t count);

// Reads the architecture back from a parameter store (levels, base
// channels, in/out channels) so checkpoints are self-describing.
UNetConfig infer_unet_config(const ParamStore& params);

} // namespace umi::denoiser
