#include "umi/pipeline.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <fftw3.h>

#include <algorithm>
#include <mutex>

namespace umi::pipeline {

void SvdFilterConfig::validate(int n_time, int n_pixels) const {
  int rank_cap = std::min(n_time, n_pixels);
  if (k_low < 0 || k_low >= rank_cap)
    throw std::invalid_argument("SvdFilterConfig: k_low must be in [0, min(n_time, n_pixels))");
  if (k_high && *k_high <= k_low)
    throw std::invalid_argument("SvdFilterConfig: k_high must exceed k_low");
}

std::pair<AngleRfCube, AngleRfCube> split_angles(const AngleRfCube& cube) {
  cube.validate();
  if (cube.n_angle < 2)
    throw std::invalid_argument("split_angles: need at least two angles to pair");

  auto take = [&](int first, Provenance prov) {
    AngleRfCube out;
    out.meta = cube.meta;
    out.subset = prov;
    out.n_angle = (cube.n_angle - first + 1) / 2;
    out.n_time = cube.n_time;
    out.n_axial = cube.n_axial;
    out.n_lateral = cube.n_lateral;
    out.angles_deg.reserve(out.n_angle);
    for (int a = first; a < cube.n_angle; a += 2)
      out.angles_deg.push_back(cube.angles_deg[a]);
    out.samples.resize(out.size());
    size_t frame = size_t(cube.n_time) * cube.n_axial * cube.n_lateral;
    for (int i = 0, a = first; a < cube.n_angle; a += 2, ++i)
      std::copy_n(cube.samples.begin() + std::ptrdiff_t(a * frame), frame,
                  out.samples.begin() + std::ptrdiff_t(i * frame));
    return out;
  };
  return {take(0, Provenance::even), take(1, Provenance::odd)};
}

RfEnsemble compound(const AngleRfCube& cube) {
  cube.validate();
  RfEnsemble out;
  out.meta = cube.meta;
  out.provenance = cube.subset;
  out.n_time = cube.n_time;
  out.n_axial = cube.n_axial;
  out.n_lateral = cube.n_lateral;
  out.samples.assign(out.size(), 0.0);
  size_t n = out.size();
  for (int a = 0; a < cube.n_angle; ++a) {
    const double* src = cube.samples.data() + size_t(a) * n;
    for (size_t i = 0; i < n; ++i) out.samples[i] += src[i];
  }
  double inv = 1.0 / cube.n_angle;
  for (double& v : out.samples) v *= inv;
  return out;
}

RfEnsemble lateral_interpolate(const RfEnsemble& ens, int factor) {
  ens.validate();
  if (factor < 1) throw std::invalid_argument("lateral_interpolate: factor must be >= 1");
  if (factor == 1) return ens;

  RfEnsemble out;
  out.meta = ens.meta;
  out.meta.pitch_lateral = ens.meta.pitch_lateral / factor;
  out.provenance = ens.provenance;
  out.n_time = ens.n_time;
  out.n_axial = ens.n_axial;
  out.n_lateral = ens.n_lateral * factor;
  out.samples.resize(out.size());
  for (int t = 0; t < ens.n_time; ++t)
    for (int z = 0; z < ens.n_axial; ++z) {
      const double* src = &ens.samples[ens.idx(t, z, 0)];
      double* dst = &out.samples[out.idx(t, z, 0)];
      for (int j = 0; j < out.n_lateral; ++j) {
        int i = j / factor;
        double frac = double(j % factor) / factor;
        if (i + 1 < ens.n_lateral)
          dst[j] = (1.0 - frac) * src[i] + frac * src[i + 1];
        else
          dst[j] = src[ens.n_lateral - 1]; // replicate last column
      }
    }
  return out;
}

RfEnsemble svd_clutter_filter(const RfEnsemble& ens, const SvdFilterConfig& cfg) {
  ens.validate();
  int n_pix = ens.n_axial * ens.n_lateral;
  cfg.validate(ens.n_time, n_pix);
  if (cfg.k_low == 0 && !cfg.k_high) return ens;

  // Casorati matrix: pixels as rows, time as columns.
  Eigen::MatrixXd casorati(n_pix, ens.n_time);
  for (int t = 0; t < ens.n_time; ++t)
    for (int p = 0; p < n_pix; ++p)
      casorati(p, t) = ens.samples[size_t(t) * n_pix + p];

  Eigen::BDCSVD<Eigen::MatrixXd> svd(casorati,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw SvdError("svd_clutter_filter: SVD did not converge");

  const auto& sv = svd.singularValues();
  int rank = int(sv.size());
  int keep_begin = std::min(cfg.k_low, rank);
  int keep_end = cfg.k_high ? std::min(*cfg.k_high, rank) : rank;

  RfEnsemble out;
  out.meta = ens.meta;
  out.provenance = ens.provenance;
  out.n_time = ens.n_time;
  out.n_axial = ens.n_axial;
  out.n_lateral = ens.n_lateral;
  out.samples.assign(out.size(), 0.0);
  if (keep_begin >= keep_end) return out;

  int band = keep_end - keep_begin;
  Eigen::MatrixXd rec = svd.matrixU().middleCols(keep_begin, band) *
                        sv.segment(keep_begin, band).asDiagonal() *
                        svd.matrixV().middleCols(keep_begin, band).transpose();
  for (int t = 0; t < ens.n_time; ++t)
    for (int p = 0; p < n_pix; ++p)
      out.samples[size_t(t) * n_pix + p] = rec(p, t);
  return out;
}

namespace {

// FFTW plan creation is not thread safe; execution with per-call buffers is.
std::mutex fftw_plan_mutex;

struct FftPlan {
  fftw_plan fwd = nullptr, inv = nullptr;
  fftw_complex* buf = nullptr;
  int n = 0;

  explicit FftPlan(int size) : n(size) {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex);
    buf = fftw_alloc_complex(size_t(n));
    fwd = fftw_plan_dft_1d(n, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    inv = fftw_plan_dft_1d(n, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(buf);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
};

} // namespace

IqEnsemble hilbert_analytic(const RfEnsemble& ens) {
  ens.validate();
  if (ens.n_axial < 8)
    throw std::invalid_argument("hilbert_analytic: n_axial must be >= 8");

  int n = ens.n_axial;
  FftPlan plan(n);
  IqEnsemble out;
  out.meta = ens.meta;
  out.provenance = ens.provenance;
  out.n_time = ens.n_time;
  out.n_axial = ens.n_axial;
  out.n_lateral = ens.n_lateral;
  out.samples.resize(out.size());

  int half = n / 2;
  bool even = (n % 2) == 0;
  double inv_n = 1.0 / n;
  for (int t = 0; t < ens.n_time; ++t)
    for (int x = 0; x < ens.n_lateral; ++x) {
      for (int z = 0; z < n; ++z) {
        plan.buf[z][0] = ens.at(t, z, x);
        plan.buf[z][1] = 0.0;
      }
      fftw_execute(plan.fwd);
      // DC (and Nyquist for even n) unscaled, positive doubled, negative zeroed.
      int pos_end = even ? half : half + 1;
      for (int k = 1; k < pos_end; ++k) {
        plan.buf[k][0] *= 2.0;
        plan.buf[k][1] *= 2.0;
      }
      for (int k = half + 1; k < n; ++k) {
        plan.buf[k][0] = 0.0;
        plan.buf[k][1] = 0.0;
      }
      fftw_execute(plan.inv);
      for (int z = 0; z < n; ++z)
        out.at(t, z, x) = {plan.buf[z][0] * inv_n, plan.buf[z][1] * inv_n};
    }
  return out;
}

std::pair<RfEnsemble, RfEnsemble> prepare_pair(const AngleRfCube& cube,
                                               const SvdFilterConfig& cfg,
                                               int interp_factor) {
  auto [even, odd] = split_angles(cube);
  RfEnsemble y1 = svd_clutter_filter(lateral_interpolate(compound(even), interp_factor), cfg);
  RfEnsemble y2 = svd_clutter_filter(lateral_interpolate(compound(odd), interp_factor), cfg);
  return {std::move(y1), std::move(y2)};
}

} // namespace umi::pipeline
