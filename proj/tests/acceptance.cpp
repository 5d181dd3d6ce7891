// Acceptance suite: one [PASS]/[FAIL] line per criterion. The end-to-end
// criteria share one trained desk-scale network (training reuse).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>

#include "umi/autodiff.hpp"
#include "umi/baselines.hpp"
#include "umi/denoiser.hpp"
#include "umi/doppler.hpp"
#include "umi/experiment.hpp"
#include "umi/io.hpp"
#include "umi/metrics.hpp"
#include "umi/phantom.hpp"
#include "umi/pipeline.hpp"
#include "umi/rng.hpp"

using namespace umi;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int id, const std::string& label, bool ok) {
  std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "FAIL", id, label.c_str());
  std::fflush(stdout);
}

double ncc(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double x = a[i] - ma, y = b[i] - mb;
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return dot / std::sqrt(na * nb);
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / double(a.size());
}

std::string temp_dir(const std::string& tag) {
  std::string dir =
      (std::filesystem::temp_directory_path() / ("umi_accept_" + tag)).string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Desk-scale evaluation phantom: strong rank-2 tissue, one parabolic
// vessel, depth-dependent white noise per angle (transmit-gain realism).
phantom::PhantomSpec desk_spec() {
  phantom::PhantomSpec s;
  s.n_axial = 128;
  s.n_lateral = 128;
  s.n_frames = 192;
  s.bandwidth = 0.7;
  s.vessels[0].center_row = 48;
  s.vessels[0].radius_px = 16;
  s.vessels[0].peak_velocity = 0.015;
  s.vessels[0].amplitude = 1.0;
  s.tissue_amplitude = 30.0;
  s.noise_sigma = 0.37;
  s.noise_depth_gain = true;
  s.noise_depth_scale = 5.0;
  return s;
}

// Heavy shared state for criteria 7-10: train once, evaluate everywhere.
struct DeskFixture {
  pipeline::SvdFilterConfig svd;
  denoiser::UNetConfig net;             // levels 4, base 16
  denoiser::TrainResult trained;
  double train_seconds = 0.0;

  phantom::PhantomSpec eval_spec;
  RoiSet rois;
  AngleRfCube eval_cube;
  RfEnsemble full;   // filtered full-angle compound (the noisy input)
  RfEnsemble ref;    // filtered noise-free reference
  RfEnsemble denoised;
  metrics::MapMetrics m_conv, m_ap, m_st, m_dn;
  double rf_snr_db = 0.0;

  static DeskFixture& get() {
    static DeskFixture f;
    return f;
  }

 private:
  DeskFixture() {
    svd.k_low = 2;

    // Training phantom: a second vessel in the lower half so every 64 px
    // training tile is normalized by vascular signal, matching the
    // frame-level normalization seen at inference.
    phantom::PhantomSpec train_spec = desk_spec();
    train_spec.n_frames = 40;
    train_spec.seed = hash_combine(1, 0x7e41ULL);
    phantom::VesselSpec second;
    second.center_row = 78;
    second.radius_px = 11;
    second.peak_velocity = -0.011;
    second.amplitude = 0.8;
    train_spec.vessels.push_back(second);
    auto [train_cube, train_gt] = phantom::render_phantom(train_spec);
    auto [y1, y2] = pipeline::prepare_pair(train_cube, svd, 1);
    denoiser::PairedPatchSet pairs = denoiser::build_pairs(y1, y2, 64, 2);

    denoiser::TrainConfig cfg; // desk: patch 64, base 16, <= 50 epochs
    cfg.batch_size = 16;
    cfg.max_epochs = 45;
    cfg.patch = 64;
    cfg.lr = 1.5e-3;
    cfg.seed = 1;
    Clock::time_point t0 = Clock::now();
    trained = denoiser::train(pairs, net, cfg);
    train_seconds = seconds_since(t0);

    eval_spec = desk_spec();
    eval_spec.seed = hash_combine(1, 0xe7a1ULL);
    auto [cube, gt] = phantom::render_phantom(eval_spec);
    eval_cube = std::move(cube);
    rois = gt.rois;
    full = pipeline::svd_clutter_filter(pipeline::compound(eval_cube), svd);

    phantom::PhantomSpec clean_spec = eval_spec;
    clean_spec.noise_sigma = 0.0;
    ref = pipeline::svd_clutter_filter(
        pipeline::compound(phantom::render_phantom(clean_spec).first), svd);

    double psig = 0, pnoise = 0;
    size_t nsig = 0, nnoise = 0;
    for (int t = 0; t < full.n_time; ++t)
      for (int z = 0; z < full.n_axial; ++z)
        for (int x = 0; x < full.n_lateral; ++x) {
          double resid = full.at(t, z, x) - ref.at(t, z, x);
          if (rois.in_blood(z, x)) {
            psig += ref.at(t, z, x) * ref.at(t, z, x);
            ++nsig;
          } else if (rois.in_noise(z, x)) {
            pnoise += resid * resid;
            ++nnoise;
          }
        }
    rf_snr_db = 10.0 * std::log10((psig / double(nsig)) / (pnoise / double(nnoise)));

    denoised = denoiser::denoise_ensemble(net, trained.params, full);
    RfEnsemble stnlm =
        baselines::st_nlm(full, baselines::StNlmConfig::from_similarity(11, 11));

    m_conv = metrics::evaluate_map(
        doppler::power_doppler(pipeline::hilbert_analytic(full)), rois);
    m_ap = metrics::evaluate_map(baselines::angular_processing(eval_cube, svd), rois);
    m_st = metrics::evaluate_map(
        doppler::power_doppler(pipeline::hilbert_analytic(stnlm)), rois);
    m_dn = metrics::evaluate_map(
        doppler::power_doppler(pipeline::hilbert_analytic(denoised)), rois);
  }
};

} // namespace

TEST_CASE("criterion 1: metric formula fidelity") {
  Clock::time_point t0 = Clock::now();
  metrics::RoiStats s;
  s.std_noise = 0.125;
  s.mean_background = 2.0;
  s.mean_blood = 2.0 + 10.0 * s.std_noise;
  bool ok = std::abs(metrics::cnr(s) - 10.0) <= 1e-9;

  s.mean_blood = 2.0 + 607.5 * s.std_noise;
  ok = ok && std::abs(metrics::cnr(s) - 10.0 * std::log10(607.5)) <= 1e-9;

  s.mean_blood = 100.0 * s.std_noise;
  ok = ok && std::abs(metrics::snr(s) - 20.0) <= 1e-9;

  s.mean_noise = 0.01;
  ok = ok && std::abs(metrics::bnp(s) + 20.0) <= 1e-9;
  s.mean_noise = 1.0;
  ok = ok && std::abs(metrics::bnp(s)) <= 1e-9;

  double dt = seconds_since(t0);
  ok = ok && dt < 1.0;
  report(1, "metric formulas match closed forms within 1e-9 dB", ok);
  CHECK(ok);
}

TEST_CASE("criterion 2: SVD filter exactness") {
  Clock::time_point t0 = Clock::now();
  RfEnsemble ens;
  ens.n_time = 64;
  ens.n_axial = 64;
  ens.n_lateral = 64;
  ens.allocate();

  // Rank-1 clutter: spatial pattern times temporal waveform.
  std::vector<double> space(size_t(64) * 64), wave(64);
  for (size_t i = 0; i < space.size(); ++i) space[i] = gaussian(hash_combine(11, i));
  for (size_t i = 0; i < wave.size(); ++i) wave[i] = gaussian(hash_combine(12, i));
  for (int t = 0; t < 64; ++t)
    for (size_t p = 0; p < space.size(); ++p)
      ens.samples[size_t(t) * space.size() + p] = wave[size_t(t)] * space[p];

  pipeline::SvdFilterConfig rank1;
  rank1.k_low = 1;
  RfEnsemble removed = pipeline::svd_clutter_filter(ens, rank1);
  double in_norm = 0, out_norm = 0;
  for (double v : ens.samples) in_norm += v * v;
  for (double v : removed.samples) out_norm += v * v;
  bool ok = std::sqrt(out_norm) <= 1e-6 * std::sqrt(in_norm);

  RfEnsemble random_ens = ens;
  for (size_t i = 0; i < random_ens.samples.size(); ++i)
    random_ens.samples[i] = gaussian(hash_combine(13, i));
  pipeline::SvdFilterConfig identity;
  RfEnsemble same = pipeline::svd_clutter_filter(random_ens, identity);
  double diff = 0, base = 0;
  for (size_t i = 0; i < same.samples.size(); ++i) {
    diff += (same.samples[i] - random_ens.samples[i]) *
            (same.samples[i] - random_ens.samples[i]);
    base += random_ens.samples[i] * random_ens.samples[i];
  }
  ok = ok && std::sqrt(diff) <= 1e-10 * std::sqrt(base);

  double dt = seconds_since(t0);
  ok = ok && dt < 5.0;
  report(2, "rank-1 removal <= 1e-6, k_low=0 identity <= 1e-10, < 5 s", ok);
  CHECK(ok);
}

TEST_CASE("criterion 3: Hilbert correctness") {
  Clock::time_point t0 = Clock::now();
  const int n = 256;
  RfEnsemble ens;
  ens.n_time = 1;
  ens.n_axial = n;
  ens.n_lateral = 2;
  ens.allocate();
  for (int z = 0; z < n; ++z) {
    ens.at(0, z, 0) = std::cos(2.0 * M_PI * 32.0 * z / n);
    ens.at(0, z, 1) = gaussian(hash_combine(21, uint64_t(z)));
  }
  IqEnsemble iq = pipeline::hilbert_analytic(ens);

  bool ok = true;
  for (int z = n / 10; z < n - n / 10; ++z) // interior 80%
    ok = ok && std::abs(std::abs(iq.at(0, z, 0)) - 1.0) < 0.01;
  for (int z = 0; z < n; ++z)
    ok = ok && std::abs(iq.at(0, z, 1).real() - ens.at(0, z, 1)) < 1e-9;

  double dt = seconds_since(t0);
  ok = ok && dt < 1.0;
  report(3, "tone envelope flat within 1%, Re(analytic) = input within 1e-9", ok);
  CHECK(ok);
}

TEST_CASE("criterion 4: N2N premise over 200 noise realizations") {
  Clock::time_point t0 = Clock::now();
  const int m = 200;
  phantom::PhantomSpec spec;
  spec.n_axial = 48;
  spec.n_lateral = 48;
  spec.n_frames = 12;
  spec.angles_deg = {-4.5, -1.5, 1.5, 4.5};
  spec.vessels[0].center_row = 20;
  spec.vessels[0].radius_px = 6;
  spec.noise_sigma = 1.0;
  spec.seed = 77;
  pipeline::SvdFilterConfig svd;
  svd.k_low = 2;

  phantom::PhantomSpec clean = spec;
  clean.noise_sigma = 0.0;
  RfEnsemble ref = pipeline::svd_clutter_filter(
      pipeline::compound(pipeline::split_angles(phantom::render_phantom(clean).first).second),
      svd);

  std::vector<double> mean_acc(ref.samples.size(), 0.0);
  double resid_sq = 0.0;
  for (int i = 0; i < m; ++i) {
    AngleRfCube cube =
        phantom::render_phantom_with_noise_seed(spec, phantom::noise_seed_for(spec.seed, i))
            .first;
    RfEnsemble odd = pipeline::svd_clutter_filter(
        pipeline::compound(pipeline::split_angles(cube).second), svd);
    for (size_t j = 0; j < odd.samples.size(); ++j) {
      mean_acc[j] += odd.samples[j];
      double r = odd.samples[j] - ref.samples[j];
      resid_sq += r * r;
    }
  }
  double sigma_eff = std::sqrt(resid_sq / double(m) / double(ref.samples.size()));
  double rms = 0.0;
  for (size_t j = 0; j < mean_acc.size(); ++j) {
    double d = mean_acc[j] / double(m) - ref.samples[j];
    rms += d * d;
  }
  rms = std::sqrt(rms / double(mean_acc.size()));

  double bound = 3.0 * sigma_eff / std::sqrt(double(m));
  double dt = seconds_since(t0);
  bool ok = rms <= bound && dt < 300.0;
  std::printf("    premise: rms %.5f vs bound %.5f (sigma_eff %.4f), %.0f s\n", rms,
              bound, sigma_eff, dt);
  report(4, "mean of filtered odd subsets approaches the clean reference", ok);
  CHECK(ok);
}

TEST_CASE("criterion 5: gradient integrity on a 2-level U-Net") {
  Clock::time_point t0 = Clock::now();
  denoiser::UNetConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  autodiff::ParamStore params = denoiser::init_unet_params(cfg, 17);

  autodiff::Tensor4 y1(2, 1, 12, 12), y2(2, 1, 12, 12);
  for (size_t i = 0; i < y1.size(); ++i) {
    y1.v[i] = 0.3 * gaussian(hash_combine(130, i)) + 5.0;
    y2.v[i] = 0.3 * gaussian(hash_combine(131, i)) - 5.0;
  }
  const double lambda_c = 0.5, lambda_l1 = 1e-5;
  auto loss = [&](bool with_grad) {
    autodiff::Tape tape;
    int o1 = denoiser::unet_forward_tape(tape, cfg, params, tape.constant(y1),
                                         autodiff::Mode::train);
    int o2 = denoiser::unet_forward_tape(tape, cfg, params, tape.constant(y2),
                                         autodiff::Mode::train);
    double norm = 2.0 + lambda_c;
    int l = tape.scalar_sum({{1.0 / norm, tape.mae_const(o1, y2)},
                             {1.0 / norm, tape.mae_const(o2, y1)},
                             {lambda_c / norm, tape.mae(o1, o2)}});
    double total = tape.scalar(l) + lambda_l1 * denoiser::param_l1(params);
    if (with_grad) {
      tape.backward(l);
      for (size_t e = 0; e < params.count(); ++e) {
        autodiff::Param& p = params.entry(e);
        if (p.role != autodiff::ParamRole::weight) continue;
        for (size_t i = 0; i < p.value.size(); ++i)
          p.grad.v[i] +=
              lambda_l1 * (p.value.v[i] > 0 ? 1.0 : (p.value.v[i] < 0 ? -1.0 : 0.0));
      }
    }
    return total;
  };
  // Probe step 1e-5 on live axes: the composite MAE loss is piecewise
  // linear, so the spec's nominal 1e-3 step straddles kinks and is not a
  // valid oracle there (see the decisions ledger); dead axes are probed
  // at 1e-3 inside gradient_check where the 1e-8 floor is calibrated.
  autodiff::GradCheckResult res = autodiff::gradient_check(params, loss, 1e-5, 200, 1);
  double dt = seconds_since(t0);
  bool ok = res.max_rel_error <= 1e-3 && res.n_checked >= 200 && dt < 120.0;
  std::printf("    gradient check: max rel error %.3e over %zu params, %.0f s\n",
              res.max_rel_error, res.n_checked, dt);
  report(5, "finite differences confirm the composite-loss gradients", ok);
  CHECK(ok);
}

TEST_CASE("criterion 6: loss arithmetic") {
  autodiff::Tensor4 zeros(1, 1, 8, 8), ones(1, 1, 8, 8);
  std::fill(ones.v.begin(), ones.v.end(), 1.0);
  bool ok = denoiser::ha2ha_loss(zeros, zeros, ones, ones, 0.5) == 0.8;

  autodiff::Tensor4 o1(1, 1, 8, 8), o2(1, 1, 8, 8), y1(1, 1, 8, 8), y2(1, 1, 8, 8);
  for (size_t i = 0; i < o1.size(); ++i) {
    o1.v[i] = gaussian(hash_combine(41, i));
    o2.v[i] = gaussian(hash_combine(42, i));
    y1.v[i] = gaussian(hash_combine(43, i));
    y2.v[i] = gaussian(hash_combine(44, i));
  }
  double mae12 = 0, mae21 = 0;
  for (size_t i = 0; i < o1.size(); ++i) {
    mae12 += std::abs(o1.v[i] - y2.v[i]);
    mae21 += std::abs(o2.v[i] - y1.v[i]);
  }
  mae12 /= double(o1.size());
  mae21 /= double(o1.size());
  ok = ok && std::abs(denoiser::ha2ha_loss(o1, o2, y1, y2, 0.0) -
                      (mae12 + mae21) / 2.0) < 1e-15;
  report(6, "hand-computable case returns 0.8 exactly; lambda_c=0 reduction", ok);
  CHECK(ok);
}

TEST_CASE("criterion 7: end-to-end denoising gain") {
  DeskFixture& f = DeskFixture::get();
  bool snr_window = f.rf_snr_db >= 5.0 && f.rf_snr_db <= 10.0;
  double cnr_gain = f.m_dn.cnr_db - f.m_conv.cnr_db;
  double bnp_drop = f.m_conv.bnp_db - f.m_dn.bnp_db;
  bool ok = f.m_conv.cnr_valid && f.m_dn.cnr_valid && snr_window &&
            cnr_gain >= 6.0 && bnp_drop >= 6.0 &&
            f.m_dn.cnr_db > f.m_ap.cnr_db && f.m_dn.cnr_db > f.m_st.cnr_db &&
            f.train_seconds < 1800.0;
  std::printf("    input RF SNR %.2f dB; CNR conv %.2f ap %.2f stnlm %.2f ha2ha %.2f\n",
              f.rf_snr_db, f.m_conv.cnr_db, f.m_ap.cnr_db, f.m_st.cnr_db,
              f.m_dn.cnr_db);
  std::printf("    CNR gain %.2f dB, BNP drop %.2f dB, training %.0f s\n", cnr_gain,
              bnp_drop, f.train_seconds);
  report(7, "HA2HA: CNR +6 dB, BNP -6 dB vs conventional; best CNR; < 30 min", ok);
  CHECK(ok);
}

TEST_CASE("criterion 8: fidelity to the clean reference") {
  DeskFixture& f = DeskFixture::get();
  double ncc_in = ncc(f.full.samples, f.ref.samples);
  double ncc_dn = ncc(f.denoised.samples, f.ref.samples);
  double mse_ratio = mse(f.denoised.samples, f.ref.samples) /
                     mse(f.full.samples, f.ref.samples);
  bool ok = ncc_dn >= ncc_in + 0.1 && mse_ratio <= 0.5;
  std::printf("    NCC %.4f -> %.4f, MSE ratio %.4f\n", ncc_in, ncc_dn, mse_ratio);
  report(8, "NCC gain >= 0.1 and MSE halved against the clean reference", ok);
  CHECK(ok);
}

TEST_CASE("criterion 9: color Doppler validity") {
  DeskFixture& f = DeskFixture::get();

  // Kasai readout at the vessel center on a noise-free flow phantom,
  // pooled lag-1 autocorrelation along the centerline row. Tissue and
  // clutter filtering are excluded here so the check isolates the
  // estimator (the filter's removal of slow blood components is a known
  // wall-filter bias, not an estimator property).
  phantom::PhantomSpec flow_spec = desk_spec();
  flow_spec.noise_sigma = 0.0;
  flow_spec.tissue_amplitude = 0.0;
  flow_spec.n_frames = 64;
  flow_spec.seed = hash_combine(1, 0xe7a1ULL);
  RfEnsemble flow = pipeline::compound(phantom::render_phantom(flow_spec).first);
  IqEnsemble iq_flow = pipeline::hilbert_analytic(flow);
  std::complex<double> r1 = 0.0;
  int center = flow_spec.vessels[0].center_row;
  for (int t = 0; t + 1 < flow.n_time; ++t)
    for (int x = 4; x < flow.n_lateral - 4; ++x)
      r1 += iq_flow.at(t + 1, center, x) * std::conj(iq_flow.at(t, center, x));
  double v_center = nyquist_velocity(flow.meta) * std::arg(r1) / M_PI;
  double v_want = flow_spec.vessels[0].peak_velocity;
  bool center_ok = std::abs(v_center - v_want) / v_want < 0.05;

  VelocityMap cdi_conv = doppler::color_doppler(pipeline::hilbert_analytic(f.full));
  VelocityMap cdi_dn = doppler::color_doppler(pipeline::hilbert_analytic(f.denoised));
  double p_conv = 0, p_dn = 0;
  size_t n = 0;
  for (int z = 0; z < cdi_conv.n_axial; ++z)
    for (int x = 0; x < cdi_conv.n_lateral; ++x)
      if (f.rois.in_noise(z, x)) {
        p_conv += cdi_conv.at(z, x) * cdi_conv.at(z, x);
        p_dn += cdi_dn.at(z, x) * cdi_dn.at(z, x);
        ++n;
      }
  double suppression_db = 10.0 * std::log10(p_conv / p_dn);
  bool ok = center_ok && suppression_db >= 6.0;
  std::printf("    center velocity %.5f m/s (want %.5f), spurious-velocity "
              "suppression %.2f dB\n",
              v_center, v_want, suppression_db);
  report(9, "Kasai center velocity within 5%; noise-region CDI power -6 dB", ok);
  CHECK(ok);
}

TEST_CASE("criterion 10: duty-cycle sweep") {
  Clock::time_point t0 = Clock::now();
  DeskFixture& f = DeskFixture::get();
  std::vector<double> conv_cnr, dn_cnr;
  std::vector<bool> conv_valid;
  for (double dc : {0.8, 0.4, 0.2, 0.1}) {
    phantom::PhantomSpec spec = desk_spec();
    spec.n_frames = 64;
    spec.duty_cycle = dc;
    spec.seed = f.eval_spec.seed; // same speckle and noise, scaled signal
    auto [cube, gt] = phantom::render_phantom(spec);
    RfEnsemble full = pipeline::svd_clutter_filter(pipeline::compound(cube), f.svd);
    RfEnsemble dn = denoiser::denoise_ensemble(f.net, f.trained.params, full);
    auto mc = metrics::evaluate_map(
        doppler::power_doppler(pipeline::hilbert_analytic(full)), gt.rois);
    auto md = metrics::evaluate_map(
        doppler::power_doppler(pipeline::hilbert_analytic(dn)), gt.rois);
    conv_valid.push_back(mc.cnr_valid);
    conv_cnr.push_back(mc.cnr_db);
    dn_cnr.push_back(md.cnr_valid ? md.cnr_db : -1e9);
    std::printf("    DC %.1f: conventional CNR %s, HA2HA CNR %.2f\n", dc,
                mc.cnr_valid ? std::to_string(mc.cnr_db).c_str() : "n/a (no contrast)",
                dn_cnr.back());
  }
  // Monotone degradation: strictly decreasing while the conventional map
  // still has contrast; once contrast is lost it must not come back.
  bool monotone = true, dominated = true;
  for (size_t i = 0; i + 1 < conv_cnr.size(); ++i) {
    if (conv_valid[i] && conv_valid[i + 1])
      monotone = monotone && conv_cnr[i] > conv_cnr[i + 1];
    else if (!conv_valid[i] && conv_valid[i + 1])
      monotone = false;
  }
  for (size_t i = 0; i < conv_cnr.size(); ++i)
    dominated = dominated && dn_cnr[i] >= (conv_valid[i] ? conv_cnr[i] : -1e9);
  double dt = seconds_since(t0);
  bool ok = monotone && dominated && (dt + f.train_seconds) < 2700.0;
  report(10, "HA2HA >= conventional CNR at every DC; conventional monotone", ok);
  CHECK(ok);
}

TEST_CASE("criterion 11: experiment determinism") {
  // Scaled-down full protocol (all four methods) run twice with one seed:
  // metric tables and every image must be byte-identical.
  ExperimentConfig cfg;
  cfg.phantom.n_axial = 64;
  cfg.phantom.n_lateral = 64;
  cfg.phantom.n_frames = 16;
  cfg.phantom.vessels[0].center_row = 24;
  cfg.phantom.vessels[0].radius_px = 8;
  cfg.phantom.noise_sigma = 1.0;
  cfg.svd.k_low = 2;
  cfg.svd_pair = cfg.svd;
  cfg.unet.levels = 2;
  cfg.unet.base_channels = 4;
  cfg.train.patch = 16;
  cfg.train.batch_size = 16;
  cfg.train.max_epochs = 3;
  cfg.train_frame_stride = 4;
  cfg.stnlm = baselines::StNlmConfig::from_similarity(5, 5);
  cfg.seed = 9;

  cfg.out_dir = temp_dir("det1");
  ExperimentReport r1 = run_experiment(cfg);
  std::string dir1 = cfg.out_dir;
  cfg.out_dir = temp_dir("det2");
  ExperimentReport r2 = run_experiment(cfg);

  bool ok = true;
  for (const char* name : {"metrics.txt", "metrics.tsv", "loss_log.txt"})
    ok = ok && io::read_text_file(dir1 + "/" + std::string(name)) ==
                   io::read_text_file(cfg.out_dir + "/" + std::string(name));
  int images = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir1)) {
    std::string name = entry.path().filename().string();
    if (name.size() < 4) continue;
    std::string ext = name.substr(name.size() - 4);
    if (ext != ".pgm" && ext != ".ppm") continue;
    ++images;
    ok = ok && io::read_text_file(entry.path().string()) ==
                   io::read_text_file(cfg.out_dir + "/" + name);
  }
  ok = ok && images > 0 && r1.rows.size() == r2.rows.size();
  std::printf("    %d images compared byte-for-byte\n", images);
  report(11, "rerun with one seed: byte-identical tables and images", ok);
  CHECK(ok);
}

TEST_CASE("criterion 12: format round-trips") {
  std::string dir = temp_dir("fmt");
  Rng rng(2026);
  bool ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    AngleRfCube cube;
    cube.n_angle = 1 + int(rng.below(5));
    cube.n_time = 1 + int(rng.below(4));
    cube.n_axial = 1 + int(rng.below(10));
    cube.n_lateral = 1 + int(rng.below(10));
    for (int a = 0; a < cube.n_angle; ++a) cube.angles_deg.push_back(a * 1.5 - 3.0);
    cube.meta.pitch_axial = double(float(3.7e-5));
    cube.meta.pitch_lateral = cube.meta.pitch_axial;
    cube.allocate();
    for (double& v : cube.samples) v = double(float(rng.normal()));
    io::write_urfc(cube, dir + "/t.urfc");
    AngleRfCube back = io::read_urfc_cube(dir + "/t.urfc");
    ok = ok && back.samples == cube.samples && back.angles_deg == cube.angles_deg;
  }
  for (int trial = 0; trial < 100; ++trial) {
    autodiff::ParamStore store;
    int n_params = 1 + int(rng.below(6));
    for (int p = 0; p < n_params; ++p) {
      autodiff::Tensor4 t(1 + int(rng.below(3)), 1 + int(rng.below(4)),
                          1 + int(rng.below(4)), 1 + int(rng.below(4)));
      for (double& v : t.v) v = double(float(rng.normal()));
      store.add("p" + std::to_string(p),
                autodiff::ParamRole(rng.below(7)), std::move(t));
    }
    autodiff::save_checkpoint(store, dir + "/t.ckpt");
    autodiff::ParamStore back = autodiff::load_checkpoint(dir + "/t.ckpt");
    ok = ok && back.count() == store.count();
    for (size_t e = 0; ok && e < store.count(); ++e)
      ok = back.entry(e).name == store.entry(e).name &&
           back.entry(e).role == store.entry(e).role &&
           back.entry(e).value.v == store.entry(e).value.v;
  }
  report(12, "URFC and checkpoint write/read are bitwise (100 cases each)", ok);
  CHECK(ok);
}
