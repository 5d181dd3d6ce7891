#include "umi/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "umi/doppler.hpp"

namespace umi::baselines {

StNlmConfig StNlmConfig::from_similarity(int sim_axial, int sim_temporal) {
  StNlmConfig cfg;
  cfg.sim_axial = sim_axial;
  cfg.sim_temporal = sim_temporal;
  auto doubled_odd = [](int w) { return (2 * w) | 1; };
  cfg.search_axial = doubled_odd(sim_axial);
  cfg.search_temporal = doubled_odd(sim_temporal);
  return cfg;
}

void StNlmConfig::validate() const {
  auto odd = [](int w) { return w >= 1 && (w % 2) == 1; };
  if (!odd(sim_axial) || !odd(sim_temporal) || !odd(search_axial) || !odd(search_temporal))
    throw std::invalid_argument("StNlmConfig: windows must be odd-sized");
  if (search_axial < sim_axial || search_temporal < sim_temporal)
    throw std::invalid_argument("StNlmConfig: search window must cover the similarity window");
  if (h && !(*h > 0.0))
    throw std::invalid_argument("StNlmConfig: h must be positive");
  if (noise_sigma && !(*noise_sigma >= 0.0))
    throw std::invalid_argument("StNlmConfig: noise sigma must be >= 0");
}

DopplerMap conventional(const AngleRfCube& cube, const pipeline::SvdFilterConfig& cfg) {
  return doppler::power_doppler(
      pipeline::hilbert_analytic(pipeline::svd_clutter_filter(pipeline::compound(cube), cfg)));
}

DopplerMap angular_processing(const AngleRfCube& cube, const pipeline::SvdFilterConfig& cfg) {
  auto [even, odd] = pipeline::split_angles(cube);
  IqEnsemble iq_even = pipeline::hilbert_analytic(
      pipeline::svd_clutter_filter(pipeline::compound(even), cfg));
  IqEnsemble iq_odd = pipeline::hilbert_analytic(
      pipeline::svd_clutter_filter(pipeline::compound(odd), cfg));
  return doppler::power_doppler_ap(iq_odd, iq_even);
}

double estimate_noise_sigma(const RfEnsemble& ens) {
  if (ens.n_time < 2) return 0.0;
  std::vector<double> diffs;
  diffs.reserve(ens.size() - size_t(ens.n_axial) * ens.n_lateral);
  size_t frame = size_t(ens.n_axial) * ens.n_lateral;
  for (int t = 0; t + 1 < ens.n_time; ++t) {
    const double* a = &ens.samples[size_t(t + 1) * frame];
    const double* b = &ens.samples[size_t(t) * frame];
    for (size_t i = 0; i < frame; ++i) diffs.push_back(std::abs(a[i] - b[i]));
  }
  size_t mid = diffs.size() / 2;
  std::nth_element(diffs.begin(), diffs.begin() + std::ptrdiff_t(mid), diffs.end());
  double med = diffs[mid];
  return med / (std::sqrt(2.0) * 0.6745);
}

namespace {

// Reflect-101 index folding, valid for any pad width.
int mirror_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

} // namespace

RfEnsemble st_nlm(const RfEnsemble& ens, const StNlmConfig& cfg) {
  ens.validate();
  cfg.validate();
  if (ens.n_axial <= cfg.search_axial || ens.n_time <= cfg.search_temporal)
    throw std::invalid_argument("st_nlm: plane smaller than the search window");

  int nz = ens.n_axial, nt = ens.n_time, nx = ens.n_lateral;
  int sz = cfg.sim_axial / 2, st = cfg.sim_temporal / 2;
  int wz = cfg.search_axial / 2, wt = cfg.search_temporal / 2;
  int pz = wz + sz, pt = wt + st;

  double sigma = cfg.noise_sigma ? *cfg.noise_sigma : estimate_noise_sigma(ens);
  double h = cfg.h ? *cfg.h : sigma;
  double h2 = std::max(h * h, 1e-24);
  double two_sigma2 = 2.0 * sigma * sigma;
  double patch_n = double(cfg.sim_axial) * cfg.sim_temporal;

  RfEnsemble out;
  out.meta = ens.meta;
  out.provenance = ens.provenance;
  out.n_time = nt;
  out.n_axial = nz;
  out.n_lateral = nx;
  out.samples.assign(out.size(), 0.0);

  int prows = nz + 2 * pz, pcols = nt + 2 * pt;
  int drows = nz + 2 * sz, dcols = nt + 2 * st;
  std::vector<double> plane(size_t(prows) * pcols);
  std::vector<double> integral(size_t(drows + 1) * (dcols + 1));
  std::vector<double> num(size_t(nz) * nt), den(size_t(nz) * nt);

  for (int x = 0; x < nx; ++x) {
    // Mirror-padded axial-temporal plane for this lateral index.
    for (int i = 0; i < prows; ++i) {
      int zi = mirror_index(i - pz, nz);
      for (int j = 0; j < pcols; ++j)
        plane[size_t(i) * pcols + j] = ens.at(mirror_index(j - pt, nt), zi, x);
    }
    std::fill(num.begin(), num.end(), 0.0);
    std::fill(den.begin(), den.end(), 0.0);

    for (int dz = -wz; dz <= wz; ++dz)
      for (int dt = -wt; dt <= wt; ++dt) {
        // Integral image of squared differences for this offset; the region
        // covers all patch sums needed by interior pixels.
        for (int j = 0; j <= dcols; ++j) integral[j] = 0.0;
        for (int i = 0; i < drows; ++i) {
          double* row = &integral[size_t(i + 1) * (dcols + 1)];
          const double* prev = &integral[size_t(i) * (dcols + 1)];
          row[0] = 0.0;
          int pi = i + (pz - sz);
          double rowsum = 0.0;
          for (int j = 0; j < dcols; ++j) {
            int pj = j + (pt - st);
            double d = plane[size_t(pi) * pcols + pj] -
                       plane[size_t(pi + dz) * pcols + (pj + dt)];
            rowsum += d * d;
            row[j + 1] = prev[j + 1] + rowsum;
          }
        }
        for (int z = 0; z < nz; ++z) {
          for (int t = 0; t < nt; ++t) {
            // Patch rows [z, z+2sz], cols [t, t+2st] in D-region coordinates.
            double sum = integral[size_t(z + 2 * sz + 1) * (dcols + 1) + (t + 2 * st + 1)] -
                         integral[size_t(z) * (dcols + 1) + (t + 2 * st + 1)] -
                         integral[size_t(z + 2 * sz + 1) * (dcols + 1) + t] +
                         integral[size_t(z) * (dcols + 1) + t];
            double d2 = sum / patch_n;
            double w = std::exp(-std::max(d2 - two_sigma2, 0.0) / h2);
            num[size_t(z) * nt + t] +=
                w * plane[size_t(z + pz + dz) * pcols + (t + pt + dt)];
            den[size_t(z) * nt + t] += w;
          }
        }
      }

    for (int z = 0; z < nz; ++z)
      for (int t = 0; t < nt; ++t)
        out.at(t, z, x) = num[size_t(z) * nt + t] / den[size_t(z) * nt + t];
  }
  return out;
}

} // namespace umi::baselines
