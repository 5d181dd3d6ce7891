#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "umi/types.hpp"

namespace umi::phantom {

enum class FlowProfile { plug, parabolic };

// A horizontal vessel: all pixels within `radius_px` of `center_row`
// carry flowing blood speckle with the given axial velocity profile.
// Positive velocity means flow toward the transducer (Doppler convention).
struct VesselSpec {
  int center_row = 0;
  int radius_px = 10;
  double peak_velocity = 0.015;  // axial component [m/s], signed
  FlowProfile profile = FlowProfile::parabolic;
  double amplitude = 1.0;        // scatterer amplitude, linear
};

struct PhantomSpec {
  int n_axial = 128, n_lateral = 128;
  double pitch = 0.0;            // isotropic [m]; 0 = derive c/(2 fs)
  double f0 = 5.208e6;           // [Hz]
  double fs = 20.832e6;          // [Hz]
  double prf = 500.0;            // ensemble frame rate [Hz]
  double c = 1540.0;             // [m/s]
  double bandwidth = 0.6;        // fractional -6 dB pulse bandwidth
  int n_frames = 64;
  std::vector<double> angles_deg = {-7.5, -4.5, -1.5, 1.5, 4.5, 7.5};
  std::vector<VesselSpec> vessels = {VesselSpec{}};
  double tissue_amplitude = 30.0;
  double tissue_mod_freq = 2.0;        // [Hz], slow multiplicative wobble
  double tissue_mod_depth = 0.02;      // epsilon of (1 + eps sin)
  double tissue_depth_fraction = 0.7;  // fraction of axial extent with tissue
  double noise_sigma = 1.5;            // per-angle white noise std, linear
  double duty_cycle = 1.0;             // DC scale on X and T, in (0, 1]
  bool noise_depth_gain = false;       // optional exponential depth gain
  double noise_depth_scale = 2.0;      // gain at the bottom row when enabled
  uint64_t seed = 1;

  double pitch_m() const { return pitch > 0.0 ? pitch : c / (2.0 * fs); }
  void validate() const;
};

// Everything the simulator knows that in-vivo data cannot provide.
struct GroundTruth {
  RfEnsemble clean_blood;        // X: blood signal shared by all angles
  RfEnsemble tissue;             // T with its slow modulation, as rendered
  std::vector<double> velocity;  // per-pixel axial velocity [m/s], row-major
  RoiSet rois;

  double velocity_at(int z, int x) const {
    return velocity[size_t(z) * rois.cols + x];
  }
};

// Renders RF[a][t] = T[t] + X[t] + N_a[t] with signal components identical
// across angles and independent zero-mean Gaussian noise per angle.
// Deterministic given the spec seed.
std::pair<AngleRfCube, GroundTruth> render_phantom(const PhantomSpec& spec);

// Same signal (keyed by spec.seed) but noise streams keyed by noise_seed.
std::pair<AngleRfCube, GroundTruth> render_phantom_with_noise_seed(
    const PhantomSpec& spec, uint64_t noise_seed);

// Seed of realization `index` as used by noise_realizations.
uint64_t noise_seed_for(uint64_t base_seed, int index);

// m renders sharing identical X and T with fresh independent noise each.
std::vector<AngleRfCube> noise_realizations(const PhantomSpec& spec, int m);

} // namespace umi::phantom
