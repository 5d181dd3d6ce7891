#include "umi/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "umi/doppler.hpp"
#include "umi/io.hpp"
#include "umi/rng.hpp"

namespace umi {

namespace {

std::string dc_tag(double dc) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", dc);
  return buf;
}

std::string fmt_db(double v, bool valid) {
  if (!valid) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

} // namespace

std::string metrics_table_text(const std::vector<MethodRow>& rows) {
  std::ostringstream out;
  out << "method        DC     CNR[dB]    SNR[dB]    BNP[dB]\n";
  for (const MethodRow& r : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-12s  %-5s  %-9s  %-9s  %-9s\n",
                  r.method.c_str(), dc_tag(r.dc).c_str(),
                  fmt_db(r.metrics.cnr_db, r.metrics.cnr_valid).c_str(),
                  fmt_db(r.metrics.snr_db, r.metrics.snr_valid).c_str(),
                  fmt_db(r.metrics.bnp_db, true).c_str());
    out << line;
  }
  return out.str();
}

std::string metrics_table_tsv(const std::vector<MethodRow>& rows) {
  std::ostringstream out;
  out << "method\tdc\tcnr_db\tsnr_db\tbnp_db\n";
  for (const MethodRow& r : rows)
    out << r.method << "\t" << dc_tag(r.dc) << "\t"
        << fmt_db(r.metrics.cnr_db, r.metrics.cnr_valid) << "\t"
        << fmt_db(r.metrics.snr_db, r.metrics.snr_valid) << "\t"
        << fmt_db(r.metrics.bnp_db, true) << "\n";
  return out.str();
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  try {
    ExperimentReport report;

    // Train once on its own phantom realization.
    bool want_ha2ha = std::count(cfg.methods.begin(), cfg.methods.end(), "ha2ha") > 0;
    denoiser::TrainResult trained;
    if (want_ha2ha) {
      phantom::PhantomSpec train_spec = cfg.phantom;
      train_spec.seed = hash_combine(cfg.seed, 0x7e41ULL);
      auto [cube, gt] = phantom::render_phantom(train_spec);
      auto [y1, y2] = pipeline::prepare_pair(cube, cfg.svd_pair, cfg.interp_factor);
      denoiser::PairedPatchSet pairs =
          denoiser::build_pairs(y1, y2, cfg.train.patch, cfg.train_frame_stride);
      trained = denoiser::train(pairs, cfg.unet, cfg.train);
      report.history = trained.history;

      std::ostringstream log;
      log << "epoch\tlr\tloss\n";
      for (const auto& e : trained.history)
        log << e.epoch << "\t" << e.lr << "\t" << e.loss << "\n";
      io::write_text_file(cfg.out_dir + "/loss_log.txt", log.str());
      autodiff::save_checkpoint(trained.params, cfg.out_dir + "/ha2ha.ckpt");
    }

    // Held-out evaluation phantom; the same seed across DC levels so the
    // sweep isolates the transmit-energy effect.
    std::vector<double> levels = cfg.dc_sweep;
    if (levels.empty()) levels.push_back(cfg.phantom.duty_cycle);

    for (double dc : levels) {
      phantom::PhantomSpec eval_spec = cfg.phantom;
      eval_spec.duty_cycle = dc;
      eval_spec.seed = hash_combine(cfg.seed, 0xe7a1ULL);
      auto [cube, gt] = phantom::render_phantom(eval_spec);
      const RoiSet& rois = gt.rois;
      io::write_rois(rois, cfg.out_dir + "/rois_dc" + dc_tag(dc));

      RfEnsemble full = pipeline::svd_clutter_filter(
          pipeline::lateral_interpolate(pipeline::compound(cube), cfg.interp_factor),
          cfg.svd);

      auto emit = [&](const std::string& method, const DopplerMap& map) {
        MethodRow row;
        row.method = method;
        row.dc = dc;
        row.metrics = metrics::evaluate_map(map, rois);
        report.rows.push_back(row);
        io::write_pgm(doppler::log_compress(map, cfg.display_dynamic_range_db),
                      cfg.out_dir + "/pd_" + method + "_dc" + dc_tag(dc) + ".pgm");
      };
      auto emit_cdi = [&](const std::string& method, const VelocityMap& map) {
        if (!cfg.write_cdi) return;
        std::string base = cfg.out_dir + "/cdi_" + method + "_dc" + dc_tag(dc);
        io::write_ppm(doppler::velocity_to_rgb(map), base + ".ppm");
        std::ostringstream side;
        side << "v_nyquist_m_per_s = " << map.v_nyquist << "\n";
        io::write_text_file(base + ".txt", side.str());
      };

      for (const std::string& method : cfg.methods) {
        if (method == "conventional") {
          emit(method, doppler::power_doppler(pipeline::hilbert_analytic(full)));
          emit_cdi(method, doppler::color_doppler(pipeline::hilbert_analytic(full)));
        } else if (method == "ap") {
          emit(method, baselines::angular_processing(cube, cfg.svd));
        } else if (method == "stnlm") {
          RfEnsemble dn = baselines::st_nlm(full, cfg.stnlm);
          emit(method, doppler::power_doppler(pipeline::hilbert_analytic(dn)));
          emit_cdi(method, doppler::color_doppler(pipeline::hilbert_analytic(dn)));
        } else if (method == "ha2ha") {
          RfEnsemble dn = denoiser::denoise_ensemble(cfg.unet, trained.params, full);
          emit(method, doppler::power_doppler(pipeline::hilbert_analytic(dn)));
          emit_cdi(method, doppler::color_doppler(pipeline::hilbert_analytic(dn)));
        } else {
          throw std::invalid_argument("run_experiment: unknown method " + method);
        }
      }
    }

    io::write_text_file(cfg.out_dir + "/metrics.txt", metrics_table_text(report.rows));
    io::write_text_file(cfg.out_dir + "/metrics.tsv", metrics_table_tsv(report.rows));
    return report;
  } catch (const std::exception& e) {
    io::write_text_file(cfg.out_dir + "/FAILED.txt", std::string(e.what()) + "\n");
    throw;
  }
}

phantom::PhantomSpec phantom_from_config(const Config& c) {
  phantom::PhantomSpec s;
  s.n_axial = c.get_int("phantom.n_axial", s.n_axial);
  s.n_lateral = c.get_int("phantom.n_lateral", s.n_lateral);
  s.pitch = c.get_num("phantom.pitch", s.pitch);
  s.f0 = c.get_num("phantom.f0", s.f0);
  s.fs = c.get_num("phantom.fs", s.fs);
  s.prf = c.get_num("phantom.prf", s.prf);
  s.c = c.get_num("phantom.c", s.c);
  s.bandwidth = c.get_num("phantom.bandwidth", s.bandwidth);
  s.n_frames = c.get_int("phantom.n_frames", s.n_frames);
  s.angles_deg = c.get_list("phantom.angles", s.angles_deg);
  s.tissue_amplitude = c.get_num("phantom.tissue_amplitude", s.tissue_amplitude);
  s.tissue_mod_freq = c.get_num("phantom.tissue_mod_freq", s.tissue_mod_freq);
  s.tissue_mod_depth = c.get_num("phantom.tissue_mod_depth", s.tissue_mod_depth);
  s.tissue_depth_fraction =
      c.get_num("phantom.tissue_depth_fraction", s.tissue_depth_fraction);
  s.noise_sigma = c.get_num("phantom.noise_sigma", s.noise_sigma);
  s.duty_cycle = c.get_num("phantom.duty_cycle", s.duty_cycle);
  s.noise_depth_gain = c.get_bool("phantom.noise_depth_gain", s.noise_depth_gain);
  s.noise_depth_scale = c.get_num("phantom.noise_depth_scale", s.noise_depth_scale);
  s.seed = c.get_u64("phantom.seed", s.seed);

  if (c.has("phantom.vessel.0.center_row")) s.vessels.clear();
  for (int i = 0; c.has("phantom.vessel." + std::to_string(i) + ".center_row"); ++i) {
    std::string p = "phantom.vessel." + std::to_string(i) + ".";
    phantom::VesselSpec v;
    v.center_row = c.get_int(p + "center_row", v.center_row);
    v.radius_px = c.get_int(p + "radius", v.radius_px);
    v.peak_velocity = c.get_num(p + "peak_velocity", v.peak_velocity);
    std::string profile = c.get_str(p + "profile", "parabolic");
    if (profile == "plug")
      v.profile = phantom::FlowProfile::plug;
    else if (profile == "parabolic")
      v.profile = phantom::FlowProfile::parabolic;
    else
      throw std::runtime_error("config: unknown flow profile " + profile);
    v.amplitude = c.get_num(p + "amplitude", v.amplitude);
    s.vessels.push_back(v);
  }
  return s;
}

ExperimentConfig experiment_from_config(const Config& c) {
  ExperimentConfig cfg;
  cfg.phantom = phantom_from_config(c);

  cfg.svd.k_low = c.get_int("pipeline.k_low", 2);
  if (c.has("pipeline.k_high")) cfg.svd.k_high = c.get_int("pipeline.k_high", 0);
  cfg.svd_pair = cfg.svd;
  if (c.has("pipeline.pair_k_low"))
    cfg.svd_pair.k_low = c.get_int("pipeline.pair_k_low", cfg.svd.k_low);
  if (c.has("pipeline.pair_k_high"))
    cfg.svd_pair.k_high = c.get_int("pipeline.pair_k_high", 0);
  cfg.interp_factor = c.get_int("pipeline.interp", 1);

  cfg.unet.levels = c.get_int("unet.levels", cfg.unet.levels);
  cfg.unet.base_channels = c.get_int("unet.base_channels", cfg.unet.base_channels);
  cfg.unet.leaky_slope = c.get_num("unet.leaky_slope", cfg.unet.leaky_slope);

  denoiser::TrainConfig& t = cfg.train;
  t.lambda_c = c.get_num("train.lambda_c", t.lambda_c);
  t.lambda_l1 = c.get_num("train.lambda_l1", t.lambda_l1);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.lr = c.get_num("train.lr", t.lr);
  t.beta1 = c.get_num("train.beta1", t.beta1);
  t.beta2 = c.get_num("train.beta2", t.beta2);
  t.weight_decay = c.get_num("train.weight_decay", t.weight_decay);
  t.plateau_factor = c.get_num("train.plateau_factor", t.plateau_factor);
  t.plateau_patience = c.get_int("train.plateau_patience", t.plateau_patience);
  t.plateau_rel_tol = c.get_num("train.plateau_rel_tol", t.plateau_rel_tol);
  t.max_epochs = c.get_int("train.max_epochs", t.max_epochs);
  t.patch = c.get_int("train.patch", t.patch);
  t.augment = c.get_bool("train.augment", t.augment);
  t.augment_rot90 = c.get_bool("train.augment_rot90", t.augment_rot90);
  t.seed = c.get_u64("train.seed", t.seed);
  cfg.train_frame_stride = c.get_int("train.frame_stride", cfg.train_frame_stride);

  cfg.stnlm.sim_axial = c.get_int("stnlm.sim_axial", cfg.stnlm.sim_axial);
  cfg.stnlm.sim_temporal = c.get_int("stnlm.sim_temporal", cfg.stnlm.sim_temporal);
  cfg.stnlm.search_axial = c.get_int("stnlm.search_axial", cfg.stnlm.search_axial);
  cfg.stnlm.search_temporal =
      c.get_int("stnlm.search_temporal", cfg.stnlm.search_temporal);
  if (c.has("stnlm.h")) cfg.stnlm.h = c.get_num("stnlm.h", 1.0);
  if (c.has("stnlm.noise_sigma"))
    cfg.stnlm.noise_sigma = c.get_num("stnlm.noise_sigma", 0.0);

  std::string methods = c.get_str("experiment.methods", "");
  if (!methods.empty()) {
    cfg.methods.clear();
    std::istringstream ss(methods);
    std::string m;
    while (std::getline(ss, m, ',')) {
      size_t a = m.find_first_not_of(" \t");
      size_t b = m.find_last_not_of(" \t");
      if (a != std::string::npos) cfg.methods.push_back(m.substr(a, b - a + 1));
    }
  }
  cfg.dc_sweep = c.get_list("experiment.dc_sweep", cfg.dc_sweep);
  cfg.out_dir = c.get_str("experiment.out_dir", cfg.out_dir);
  cfg.display_dynamic_range_db =
      c.get_num("experiment.dynamic_range_db", cfg.display_dynamic_range_db);
  cfg.write_cdi = c.get_bool("experiment.write_cdi", cfg.write_cdi);
  cfg.seed = c.get_u64("experiment.seed", cfg.seed);
  return cfg;
}

} // namespace umi
