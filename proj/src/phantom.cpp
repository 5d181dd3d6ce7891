#include "umi/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "umi/rng.hpp"

namespace umi::phantom {

namespace {

// RNG stream tags; every draw is keyed by (seed, tag, indices...).
constexpr uint64_t kStreamBlood = 0xb100d;
constexpr uint64_t kStreamTissue = 0x715503;
constexpr uint64_t kStreamNoise = 0x9015e;

// Gaussian-modulated cosine pulse sampled at the pixel pitch. The carrier
// sits at the pulse-echo spatial frequency 2 f0 / c.
std::vector<double> axial_pulse(const PhantomSpec& spec, int* half_out) {
  double p = spec.pitch_m();
  double sigma_t = std::sqrt(2.0 * std::log(2.0)) / (M_PI * spec.bandwidth * spec.f0);
  double sigma_z = spec.c * sigma_t / 2.0;
  double k_carrier = 2.0 * M_PI * (2.0 * spec.f0 / spec.c);
  int half = std::max(1, int(std::ceil(3.5 * sigma_z / p)));
  std::vector<double> g(size_t(2 * half + 1));
  for (int k = -half; k <= half; ++k) {
    double z = k * p;
    g[size_t(k + half)] = std::exp(-0.5 * z * z / (sigma_z * sigma_z)) *
                          std::cos(k_carrier * z);
  }
  *half_out = half;
  return g;
}

// Windowed-sinc (Hann, half width 8) sample of a hashed white field at a
// fractional row. Exact at integer positions.
constexpr int kSincHalf = 8;

double field_sample(uint64_t seed, uint64_t stream, double row, int col) {
  double rounded = std::round(row);
  if (std::abs(row - rounded) < 1e-12) {
    return gaussian(hash_combine(seed, stream, uint64_t(int64_t(rounded)), uint64_t(col)));
  }
  int base = int(std::floor(row));
  double acc = 0.0;
  for (int k = base - kSincHalf + 1; k <= base + kSincHalf; ++k) {
    double d = row - k;
    double w = std::sin(M_PI * d) / (M_PI * d) * 0.5 * (1.0 + std::cos(M_PI * d / kSincHalf));
    acc += w * gaussian(hash_combine(seed, stream, uint64_t(int64_t(k)), uint64_t(col)));
  }
  return acc;
}

// Axial convolution of one frame with the pulse, zero padding outside.
void convolve_axial(const std::vector<double>& in, int n_axial, int n_lateral,
                    const std::vector<double>& pulse, int half,
                    std::vector<double>& out) {
  for (int z = 0; z < n_axial; ++z)
    for (int x = 0; x < n_lateral; ++x) {
      double acc = 0.0;
      int k0 = std::max(-half, z - (n_axial - 1));
      int k1 = std::min(half, z);
      for (int k = k0; k <= k1; ++k)
        acc += pulse[size_t(k + half)] * in[size_t(z - k) * n_lateral + x];
      out[size_t(z) * n_lateral + x] = acc;
    }
}

} // namespace

void PhantomSpec::validate() const {
  if (n_axial < 32 || n_lateral < 32)
    throw std::invalid_argument("PhantomSpec: grid dims must be >= 32");
  if (!(fs >= 2.0 * f0))
    throw std::invalid_argument("PhantomSpec: fs must satisfy fs >= 2 f0");
  if (!(prf > 0.0)) throw std::invalid_argument("PhantomSpec: PRF must be positive");
  if (!(noise_sigma >= 0.0))
    throw std::invalid_argument("PhantomSpec: noise sigma must be >= 0");
  if (!(duty_cycle > 0.0 && duty_cycle <= 1.0))
    throw std::invalid_argument("PhantomSpec: duty cycle must be in (0, 1]");
  if (n_frames < 1) throw std::invalid_argument("PhantomSpec: n_frames must be >= 1");
  if (angles_deg.empty())
    throw std::invalid_argument("PhantomSpec: angle list must be nonempty");
  for (size_t i = 1; i < angles_deg.size(); ++i)
    if (!(angles_deg[i] > angles_deg[i - 1]))
      throw std::invalid_argument("PhantomSpec: angles must be strictly increasing");
  if (!(tissue_depth_fraction > 0.0 && tissue_depth_fraction <= 1.0))
    throw std::invalid_argument("PhantomSpec: tissue depth fraction must be in (0, 1]");
  if (!(bandwidth > 0.0 && bandwidth < 2.0))
    throw std::invalid_argument("PhantomSpec: fractional bandwidth out of range");
  double v_nyq = c * prf / (4.0 * f0);
  for (const VesselSpec& v : vessels) {
    if (v.radius_px < 1)
      throw std::invalid_argument("VesselSpec: radius must be >= 1 pixel");
    if (!(std::abs(v.peak_velocity) < v_nyq))
      throw std::invalid_argument("VesselSpec: peak velocity at or above the Nyquist velocity");
    if (v.center_row < 0 || v.center_row >= n_axial)
      throw std::invalid_argument("VesselSpec: centerline outside the grid");
  }
}

uint64_t noise_seed_for(uint64_t base_seed, int index) {
  return hash_combine(base_seed, 0x5eedULL, uint64_t(index));
}

std::pair<AngleRfCube, GroundTruth> render_phantom_with_noise_seed(
    const PhantomSpec& spec, uint64_t noise_seed) {
  spec.validate();

  int nz = spec.n_axial, nx = spec.n_lateral, nt = spec.n_frames;
  int na = int(spec.angles_deg.size());
  size_t frame_px = size_t(nz) * nx;
  double p = spec.pitch_m();

  int pulse_half = 0;
  std::vector<double> pulse = axial_pulse(spec, &pulse_half);

  // Per-pixel axial velocity and vessel membership. Later vessels win on overlap.
  std::vector<double> velocity(frame_px, 0.0);
  std::vector<uint8_t> in_vessel(frame_px, 0);
  std::vector<double> vessel_amp(frame_px, 0.0);
  for (const VesselSpec& v : spec.vessels) {
    for (int z = std::max(0, v.center_row - v.radius_px);
         z <= std::min(nz - 1, v.center_row + v.radius_px); ++z) {
      double d = double(z - v.center_row) / v.radius_px;
      double vel = v.profile == FlowProfile::parabolic
                       ? v.peak_velocity * (1.0 - d * d)
                       : v.peak_velocity;
      for (int x = 0; x < nx; ++x) {
        size_t i = size_t(z) * nx + x;
        velocity[i] = vel;
        in_vessel[i] = 1;
        vessel_amp[i] = v.amplitude;
      }
    }
  }

  int tissue_rows = int(std::lround(spec.tissue_depth_fraction * nz));
  tissue_rows = std::clamp(tissue_rows, 1, nz);

  // Static tissue speckle, zero inside vessels and below the tissue floor.
  std::vector<double> tissue_raw(frame_px, 0.0), tissue_conv(frame_px, 0.0);
  if (spec.tissue_amplitude > 0.0) {
    for (int z = 0; z < tissue_rows; ++z)
      for (int x = 0; x < nx; ++x) {
        size_t i = size_t(z) * nx + x;
        if (!in_vessel[i])
          tissue_raw[i] = spec.tissue_amplitude *
                          gaussian(hash_combine(spec.seed, kStreamTissue,
                                                uint64_t(z), uint64_t(x)));
      }
    convolve_axial(tissue_raw, nz, nx, pulse, pulse_half, tissue_conv);
  }

  GroundTruth gt;
  gt.clean_blood.meta.f0 = spec.f0;
  gt.clean_blood.meta.fs = spec.fs;
  gt.clean_blood.meta.prf = spec.prf;
  gt.clean_blood.meta.c = spec.c;
  gt.clean_blood.meta.pitch_axial = p;
  gt.clean_blood.meta.pitch_lateral = p;
  gt.clean_blood.n_time = nt;
  gt.clean_blood.n_axial = nz;
  gt.clean_blood.n_lateral = nx;
  gt.clean_blood.allocate();
  gt.tissue = gt.clean_blood;
  gt.velocity = velocity;

  // Blood: frozen speckle advected axially per pixel, then pulse-convolved.
  // Positive velocity moves the pattern toward the transducer (-z), which
  // the Kasai estimator reads as positive phase.
  std::vector<double> blood_raw(frame_px), blood_conv(frame_px);
  double px_per_second = 1.0 / (spec.prf * p);
  for (int t = 0; t < nt; ++t) {
    std::fill(blood_raw.begin(), blood_raw.end(), 0.0);
    bool any = false;
    for (size_t i = 0; i < frame_px; ++i) {
      if (!in_vessel[i]) continue;
      any = true;
      int z = int(i / nx), x = int(i % nx);
      double src_row = z + velocity[i] * t * px_per_second;
      blood_raw[i] = vessel_amp[i] * field_sample(spec.seed, kStreamBlood, src_row, x);
    }
    if (any) {
      convolve_axial(blood_raw, nz, nx, pulse, pulse_half, blood_conv);
    } else {
      std::fill(blood_conv.begin(), blood_conv.end(), 0.0);
    }
    double mod = 1.0 + spec.tissue_mod_depth *
                           std::sin(2.0 * M_PI * spec.tissue_mod_freq * t / spec.prf);
    double* xb = &gt.clean_blood.samples[size_t(t) * frame_px];
    double* xt = &gt.tissue.samples[size_t(t) * frame_px];
    for (size_t i = 0; i < frame_px; ++i) {
      xb[i] = spec.duty_cycle * blood_conv[i];
      xt[i] = spec.duty_cycle * mod * tissue_conv[i];
    }
  }

  // ROI masks: blood = vessel interiors; noise = a tissue-free strip below
  // the tissue floor with a pulse-length guard; background = the rest.
  gt.rois.rows = nz;
  gt.rois.cols = nx;
  gt.rois.blood.assign(frame_px, 0);
  gt.rois.background.assign(frame_px, 0);
  gt.rois.noise.assign(frame_px, 0);
  int guard = pulse_half + 2;
  int noise_top = std::min(nz, tissue_rows + guard);
  for (int z = 0; z < nz; ++z)
    for (int x = 0; x < nx; ++x) {
      size_t i = size_t(z) * nx + x;
      if (in_vessel[i])
        gt.rois.blood[i] = 1;
      else if (z >= noise_top && z < nz - 1)
        gt.rois.noise[i] = 1;
      else
        gt.rois.background[i] = 1;
    }
  if (!spec.vessels.empty()) gt.rois.validate();

  AngleRfCube cube;
  cube.meta = gt.clean_blood.meta;
  cube.angles_deg = spec.angles_deg;
  cube.subset = Provenance::full;
  cube.n_angle = na;
  cube.n_time = nt;
  cube.n_axial = nz;
  cube.n_lateral = nx;
  cube.allocate();
  uint64_t nkey = hash_combine(noise_seed, kStreamNoise);
  for (int a = 0; a < na; ++a)
    for (int t = 0; t < nt; ++t) {
      const double* xb = &gt.clean_blood.samples[size_t(t) * frame_px];
      const double* xt = &gt.tissue.samples[size_t(t) * frame_px];
      double* dst = &cube.samples[(size_t(a) * nt + t) * frame_px];
      for (int z = 0; z < nz; ++z) {
        double gain = 1.0;
        if (spec.noise_depth_gain && nz > 1)
          gain = std::exp(std::log(spec.noise_depth_scale) * z / (nz - 1));
        for (int x = 0; x < nx; ++x) {
          size_t i = size_t(z) * nx + x;
          double n = spec.noise_sigma * gain *
                     gaussian(hash_combine(nkey, uint64_t(a), uint64_t(t),
                                           uint64_t(z), uint64_t(x)));
          dst[i] = xb[i] + xt[i] + n;
        }
      }
    }
  return {std::move(cube), std::move(gt)};
}

std::pair<AngleRfCube, GroundTruth> render_phantom(const PhantomSpec& spec) {
  return render_phantom_with_noise_seed(spec, spec.seed);
}

std::vector<AngleRfCube> noise_realizations(const PhantomSpec& spec, int m) {
  if (m < 1) throw std::invalid_argument("noise_realizations: m must be >= 1");
  std::vector<AngleRfCube> out;
  out.reserve(size_t(m));
  for (int i = 0; i < m; ++i)
    out.push_back(render_phantom_with_noise_seed(spec, noise_seed_for(spec.seed, i)).first);
  return out;
}

} // namespace umi::phantom
