#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace umi {

// Which angle subset an ensemble (or cube) was derived from.
enum class Provenance : uint8_t { full = 0, odd = 1, even = 2 };

std::string to_string(Provenance p);

// Acquisition metadata shared by cubes, ensembles and maps.
struct SeqMeta {
  double f0 = 5.208e6;        // transmit center frequency [Hz]
  double fs = 20.832e6;       // RF sampling frequency [Hz]
  double prf = 500.0;         // ensemble frame rate [Hz]
  double c = 1540.0;          // speed of sound [m/s]
  double pitch_axial = 0.0;   // [m]
  double pitch_lateral = 0.0; // [m]
};

// Nyquist velocity of the Kasai estimator, c*prf/(4*f0).
inline double nyquist_velocity(const SeqMeta& m) { return m.c * m.prf / (4.0 * m.f0); }

// Per-angle beamformed RF, samples indexed [angle][time][axial][lateral],
// lateral fastest. Angle list is strictly increasing.
struct AngleRfCube {
  SeqMeta meta;
  std::vector<double> angles_deg;
  Provenance subset = Provenance::full;
  int n_angle = 0, n_time = 0, n_axial = 0, n_lateral = 0;
  std::vector<double> samples;

  size_t idx(int a, int t, int z, int x) const {
    return ((size_t(a) * n_time + t) * n_axial + z) * n_lateral + x;
  }
  double& at(int a, int t, int z, int x) { return samples[idx(a, t, z, x)]; }
  double at(int a, int t, int z, int x) const { return samples[idx(a, t, z, x)]; }
  size_t size() const { return size_t(n_angle) * n_time * n_axial * n_lateral; }
  void allocate() { samples.assign(size(), 0.0); }
  void validate() const;
};

// Compounded real RF ensemble, [time][axial][lateral].
struct RfEnsemble {
  SeqMeta meta;
  Provenance provenance = Provenance::full;
  int n_time = 0, n_axial = 0, n_lateral = 0;
  std::vector<double> samples;

  size_t idx(int t, int z, int x) const {
    return (size_t(t) * n_axial + z) * n_lateral + x;
  }
  double& at(int t, int z, int x) { return samples[idx(t, z, x)]; }
  double at(int t, int z, int x) const { return samples[idx(t, z, x)]; }
  size_t size() const { return size_t(n_time) * n_axial * n_lateral; }
  void allocate() { samples.assign(size(), 0.0); }
  void validate() const;
};

// Complex analytic-signal ensemble produced by hilbert_analytic.
struct IqEnsemble {
  SeqMeta meta;
  Provenance provenance = Provenance::full;
  int n_time = 0, n_axial = 0, n_lateral = 0;
  std::vector<std::complex<double>> samples;

  size_t idx(int t, int z, int x) const {
    return (size_t(t) * n_axial + z) * n_lateral + x;
  }
  std::complex<double>& at(int t, int z, int x) { return samples[idx(t, z, x)]; }
  std::complex<double> at(int t, int z, int x) const { return samples[idx(t, z, x)]; }
  size_t size() const { return size_t(n_time) * n_axial * n_lateral; }
  void allocate() { samples.assign(size(), {0.0, 0.0}); }
};

// Temporal-mean power image, linear intensity >= 0.
struct DopplerMap {
  SeqMeta meta;
  int n_axial = 0, n_lateral = 0;
  std::vector<double> intensity;

  double& at(int z, int x) { return intensity[size_t(z) * n_lateral + x]; }
  double at(int z, int x) const { return intensity[size_t(z) * n_lateral + x]; }
  size_t size() const { return size_t(n_axial) * n_lateral; }
};

// Signed axial velocity image [m/s], bounded by the Nyquist velocity.
struct VelocityMap {
  SeqMeta meta;
  int n_axial = 0, n_lateral = 0;
  double v_nyquist = 0.0;
  std::vector<double> velocity;

  double& at(int z, int x) { return velocity[size_t(z) * n_lateral + x]; }
  double at(int z, int x) const { return velocity[size_t(z) * n_lateral + x]; }
};

struct GrayImage {
  int rows = 0, cols = 0;
  std::vector<uint8_t> pixels; // row-major

  uint8_t at(int r, int c) const { return pixels[size_t(r) * cols + c]; }
};

struct RgbImage {
  int rows = 0, cols = 0;
  std::vector<uint8_t> pixels; // row-major, interleaved r,g,b
};

// Boolean pixel masks for metric evaluation. Must be pairwise disjoint
// and individually nonempty.
struct RoiSet {
  int rows = 0, cols = 0;
  std::vector<uint8_t> blood, background, noise;

  bool in_blood(int r, int c) const { return blood[size_t(r) * cols + c] != 0; }
  bool in_background(int r, int c) const { return background[size_t(r) * cols + c] != 0; }
  bool in_noise(int r, int c) const { return noise[size_t(r) * cols + c] != 0; }
  void validate() const;
};

} // namespace umi
