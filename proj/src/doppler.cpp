#include "umi/doppler.hpp"

#include <algorithm>
#include <cmath>

namespace umi::doppler {

DopplerMap power_doppler(const IqEnsemble& iq) {
  if (iq.n_time < 1) throw std::invalid_argument("power_doppler: empty ensemble");
  DopplerMap map;
  map.meta = iq.meta;
  map.n_axial = iq.n_axial;
  map.n_lateral = iq.n_lateral;
  map.intensity.assign(map.size(), 0.0);
  size_t frame = map.size();
  for (int t = 0; t < iq.n_time; ++t) {
    const std::complex<double>* s = &iq.samples[size_t(t) * frame];
    for (size_t i = 0; i < frame; ++i) map.intensity[i] += std::norm(s[i]);
  }
  double inv = 1.0 / iq.n_time;
  for (double& v : map.intensity) v *= inv;
  return map;
}

VelocityMap color_doppler(const IqEnsemble& iq) {
  if (iq.n_time < 2)
    throw std::invalid_argument("color_doppler: need at least two frames");
  VelocityMap map;
  map.meta = iq.meta;
  map.n_axial = iq.n_axial;
  map.n_lateral = iq.n_lateral;
  map.v_nyquist = nyquist_velocity(iq.meta);
  map.velocity.assign(size_t(map.n_axial) * map.n_lateral, 0.0);
  size_t frame = map.velocity.size();
  std::vector<std::complex<double>> r1(frame, {0.0, 0.0});
  for (int t = 0; t + 1 < iq.n_time; ++t) {
    const std::complex<double>* a = &iq.samples[size_t(t + 1) * frame];
    const std::complex<double>* b = &iq.samples[size_t(t) * frame];
    for (size_t i = 0; i < frame; ++i) r1[i] += a[i] * std::conj(b[i]);
  }
  for (size_t i = 0; i < frame; ++i) {
    if (r1[i] == std::complex<double>(0.0, 0.0)) continue;
    map.velocity[i] = map.v_nyquist * std::arg(r1[i]) / M_PI;
  }
  return map;
}

DopplerMap power_doppler_ap(const IqEnsemble& odd, const IqEnsemble& even) {
  if (odd.n_time != even.n_time || odd.n_axial != even.n_axial ||
      odd.n_lateral != even.n_lateral)
    throw std::invalid_argument("power_doppler_ap: ensemble dims mismatch");
  if (odd.n_time < 1) throw std::invalid_argument("power_doppler_ap: empty ensemble");
  DopplerMap map;
  map.meta = odd.meta;
  map.n_axial = odd.n_axial;
  map.n_lateral = odd.n_lateral;
  map.intensity.assign(map.size(), 0.0);
  size_t frame = map.size();
  for (int t = 0; t < odd.n_time; ++t) {
    const std::complex<double>* a = &odd.samples[size_t(t) * frame];
    const std::complex<double>* b = &even.samples[size_t(t) * frame];
    for (size_t i = 0; i < frame; ++i)
      map.intensity[i] += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
  }
  double inv = 1.0 / odd.n_time;
  for (double& v : map.intensity) v = std::max(0.0, v * inv);
  return map;
}

GrayImage log_compress(const DopplerMap& map, double dynamic_range_db) {
  if (!(dynamic_range_db > 0.0))
    throw std::invalid_argument("log_compress: dynamic range must be positive");
  GrayImage img;
  img.rows = map.n_axial;
  img.cols = map.n_lateral;
  img.pixels.assign(map.size(), 0);
  double peak = 0.0;
  for (double v : map.intensity) peak = std::max(peak, v);
  if (peak <= 0.0) return img; // all-zero map stays all-zero
  for (size_t i = 0; i < map.intensity.size(); ++i) {
    double v = map.intensity[i];
    if (v <= 0.0) continue;
    double db = 10.0 * std::log10(v / peak);
    db = std::clamp(db, -dynamic_range_db, 0.0);
    img.pixels[i] = uint8_t(std::lround(255.0 * (db + dynamic_range_db) / dynamic_range_db));
  }
  return img;
}

RgbImage velocity_to_rgb(const VelocityMap& map) {
  RgbImage img;
  img.rows = map.n_axial;
  img.cols = map.n_lateral;
  img.pixels.assign(size_t(img.rows) * img.cols * 3, 0);
  double vmax = map.v_nyquist > 0.0 ? map.v_nyquist : 1.0;
  for (size_t i = 0; i < map.velocity.size(); ++i) {
    double u = std::clamp(map.velocity[i] / vmax, -1.0, 1.0);
    uint8_t level = uint8_t(std::lround(255.0 * std::abs(u)));
    if (u > 0.0)
      img.pixels[3 * i] = level; // red toward the transducer
    else
      img.pixels[3 * i + 2] = level;
  }
  return img;
}

} // namespace umi::doppler
