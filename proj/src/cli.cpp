#include "umi/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "umi/autodiff.hpp"
#include "umi/baselines.hpp"
#include "umi/config.hpp"
#include "umi/denoiser.hpp"
#include "umi/doppler.hpp"
#include "umi/experiment.hpp"
#include "umi/io.hpp"
#include "umi/metrics.hpp"
#include "umi/phantom.hpp"
#include "umi/pipeline.hpp"

namespace umi::cli {

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Config load_config(const std::string& path) {
  try {
    return Config::load(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

void apply_seed(Config& cfg, const std::optional<uint64_t>& seed) {
  if (!seed) return;
  std::string s = std::to_string(*seed);
  cfg.set("phantom.seed", s);
  cfg.set("train.seed", s);
  cfg.set("experiment.seed", s);
}

pipeline::SvdFilterConfig svd_from_flags(int k_low, int k_high) {
  pipeline::SvdFilterConfig cfg;
  cfg.k_low = k_low;
  if (k_high >= 0) cfg.k_high = k_high;
  return cfg;
}

DopplerMap map_from_urfc(const std::string& path) {
  RfEnsemble ens = io::read_urfc_ensemble(path);
  if (ens.n_time != 1)
    throw std::runtime_error("metrics: expected a single-frame map, got an ensemble");
  DopplerMap map;
  map.meta = ens.meta;
  map.n_axial = ens.n_axial;
  map.n_lateral = ens.n_lateral;
  map.intensity = ens.samples;
  return map;
}

void write_map_urfc(const DopplerMap& map, const std::string& path) {
  RfEnsemble ens;
  ens.meta = map.meta;
  ens.n_time = 1;
  ens.n_axial = map.n_axial;
  ens.n_lateral = map.n_lateral;
  ens.samples = map.intensity;
  io::write_urfc(ens, path);
}

} // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"HA2HA ultrasound microvascular denoising toolkit"};
  app.require_subcommand(1);

  std::optional<uint64_t> seed;
  app.add_option("--seed", seed, "Override every configured seed");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Render a phantom to URFC");
  std::string sim_config, sim_out, sim_rois, sim_clean, sim_tissue;
  sim->add_option("--config", sim_config, "Config file")->required();
  sim->add_option("--out", sim_out, "Output cube path")->required();
  sim->add_option("--rois", sim_rois, "Directory for ground-truth ROI masks");
  sim->add_option("--clean", sim_clean, "Path for the clean blood ensemble");
  sim->add_option("--tissue", sim_tissue, "Path for the tissue ensemble");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Compound, filter and pair a cube");
  std::string pipe_in, pipe_y1, pipe_y2, pipe_full;
  int pipe_klow = 0, pipe_khigh = -1, pipe_interp = 1;
  pipe->add_option("--in", pipe_in, "Input cube")->required();
  pipe->add_option("--k-low", pipe_klow, "Leading singular components to zero");
  pipe->add_option("--k-high", pipe_khigh, "First trailing component to zero");
  pipe->add_option("--interp", pipe_interp, "Lateral interpolation factor");
  pipe->add_option("--y1", pipe_y1, "Even-subset output ensemble");
  pipe->add_option("--y2", pipe_y2, "Odd-subset output ensemble");
  pipe->add_option("--full", pipe_full, "Full-angle filtered output ensemble");

  // train
  auto* tr = app.add_subcommand("train", "Train the denoiser on paired ensembles");
  std::string tr_config, tr_y1, tr_y2, tr_ckpt = "ha2ha.ckpt", tr_log;
  tr->add_option("--config", tr_config, "Config file")->required();
  tr->add_option("--y1", tr_y1, "Even-subset ensemble")->required();
  tr->add_option("--y2", tr_y2, "Odd-subset ensemble")->required();
  tr->add_option("--out", tr_ckpt, "Checkpoint output path");
  tr->add_option("--log", tr_log, "Per-epoch loss log path");

  // denoise
  auto* dn = app.add_subcommand("denoise", "Frame-wise inference on an ensemble");
  std::string dn_ckpt, dn_in, dn_out;
  dn->add_option("--ckpt", dn_ckpt, "Checkpoint path")->required();
  dn->add_option("--in", dn_in, "Input ensemble")->required();
  dn->add_option("--out", dn_out, "Output ensemble")->required();

  // doppler
  auto* dop = app.add_subcommand("doppler", "Power or color Doppler from an ensemble");
  std::string dop_kind, dop_in, dop_out, dop_image;
  double dop_dr = 40.0;
  dop->add_option("kind", dop_kind, "power | color")->required();
  dop->add_option("--in", dop_in, "Input RF ensemble")->required();
  dop->add_option("--out", dop_out, "Output URFC map (power only)");
  dop->add_option("--image", dop_image, "PGM (power) or PPM (color) image path");
  dop->add_option("--dr", dop_dr, "Display dynamic range in dB");

  // baseline
  auto* base = app.add_subcommand("baseline", "Reference methods");
  std::string base_kind, base_in, base_out, base_image, base_config;
  int base_klow = 2, base_khigh = -1;
  base->add_option("kind", base_kind, "conventional | ap | stnlm")->required();
  base->add_option("--in", base_in, "Input cube")->required();
  base->add_option("--k-low", base_klow, "Leading singular components to zero");
  base->add_option("--k-high", base_khigh, "First trailing component to zero");
  base->add_option("--config", base_config, "Config file (stnlm.* keys)");
  base->add_option("--out", base_out, "Output URFC (map, or ensemble for stnlm)");
  base->add_option("--image", base_image, "PGM image path");
  double base_dr = 40.0;
  base->add_option("--dr", base_dr, "Display dynamic range in dB");

  // metrics
  auto* met = app.add_subcommand("metrics", "CNR/SNR/BNP of a power map");
  std::string met_map, met_rois, met_out;
  met->add_option("--map", met_map, "Power map (URFC, single frame)")->required();
  met->add_option("--rois", met_rois, "ROI mask directory")->required();
  met->add_option("--out", met_out, "Also write the table to this path");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Full train/evaluate protocol");
  std::string exp_config, exp_out;
  exp->add_option("--config", exp_config, "Config file")->required();
  exp->add_option("--out", exp_out, "Output directory (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*sim) {
      Config c = load_config(sim_config);
      apply_seed(c, seed);
      phantom::PhantomSpec spec = phantom_from_config(c);
      auto [cube, gt] = phantom::render_phantom(spec);
      io::write_urfc(cube, sim_out);
      if (!sim_rois.empty()) {
        std::ostringstream side;
        side << "pitch_m = " << spec.pitch_m() << "\n"
             << "v_nyquist_m_per_s = " << nyquist_velocity(cube.meta) << "\n";
        io::write_rois(gt.rois, sim_rois, side.str());
      }
      if (!sim_clean.empty()) io::write_urfc(gt.clean_blood, sim_clean);
      if (!sim_tissue.empty()) io::write_urfc(gt.tissue, sim_tissue);
    } else if (*pipe) {
      AngleRfCube cube = io::read_urfc_cube(pipe_in);
      pipeline::SvdFilterConfig cfg = svd_from_flags(pipe_klow, pipe_khigh);
      if (!pipe_y1.empty() || !pipe_y2.empty()) {
        auto [y1, y2] = pipeline::prepare_pair(cube, cfg, pipe_interp);
        if (!pipe_y1.empty()) io::write_urfc(y1, pipe_y1);
        if (!pipe_y2.empty()) io::write_urfc(y2, pipe_y2);
      }
      if (!pipe_full.empty()) {
        RfEnsemble full = pipeline::svd_clutter_filter(
            pipeline::lateral_interpolate(pipeline::compound(cube), pipe_interp), cfg);
        io::write_urfc(full, pipe_full);
      }
    } else if (*tr) {
      Config c = load_config(tr_config);
      apply_seed(c, seed);
      ExperimentConfig ecfg = experiment_from_config(c);
      RfEnsemble y1 = io::read_urfc_ensemble(tr_y1);
      RfEnsemble y2 = io::read_urfc_ensemble(tr_y2);
      denoiser::PairedPatchSet pairs =
          denoiser::build_pairs(y1, y2, ecfg.train.patch, ecfg.train_frame_stride);
      denoiser::TrainResult result = denoiser::train(pairs, ecfg.unet, ecfg.train);
      autodiff::save_checkpoint(result.params, tr_ckpt);
      if (!tr_log.empty()) {
        std::ostringstream log;
        log << "epoch\tlr\tloss\n";
        for (const auto& e : result.history)
          log << e.epoch << "\t" << e.lr << "\t" << e.loss << "\n";
        io::write_text_file(tr_log, log.str());
      }
    } else if (*dn) {
      autodiff::ParamStore params = autodiff::load_checkpoint(dn_ckpt);
      denoiser::UNetConfig cfg = denoiser::infer_unet_config(params);
      RfEnsemble ens = io::read_urfc_ensemble(dn_in);
      io::write_urfc(denoiser::denoise_ensemble(cfg, params, ens), dn_out);
    } else if (*dop) {
      RfEnsemble ens = io::read_urfc_ensemble(dop_in);
      IqEnsemble iq = pipeline::hilbert_analytic(ens);
      if (dop_kind == "power") {
        DopplerMap map = doppler::power_doppler(iq);
        if (!dop_out.empty()) write_map_urfc(map, dop_out);
        if (!dop_image.empty())
          io::write_pgm(doppler::log_compress(map, dop_dr), dop_image);
      } else if (dop_kind == "color") {
        VelocityMap map = doppler::color_doppler(iq);
        if (!dop_image.empty()) io::write_ppm(doppler::velocity_to_rgb(map), dop_image);
        if (!dop_out.empty()) {
          RfEnsemble v;
          v.meta = map.meta;
          v.n_time = 1;
          v.n_axial = map.n_axial;
          v.n_lateral = map.n_lateral;
          v.samples = map.velocity;
          io::write_urfc(v, dop_out);
        }
      } else {
        std::cerr << "doppler: unknown kind '" << dop_kind << "' (power | color)\n";
        return 2;
      }
    } else if (*base) {
      AngleRfCube cube = io::read_urfc_cube(base_in);
      pipeline::SvdFilterConfig cfg = svd_from_flags(base_klow, base_khigh);
      DopplerMap map;
      if (base_kind == "conventional") {
        map = baselines::conventional(cube, cfg);
      } else if (base_kind == "ap") {
        map = baselines::angular_processing(cube, cfg);
      } else if (base_kind == "stnlm") {
        baselines::StNlmConfig ncfg;
        if (!base_config.empty()) {
          Config c = load_config(base_config);
          ExperimentConfig ecfg = experiment_from_config(c);
          ncfg = ecfg.stnlm;
        }
        RfEnsemble full =
            pipeline::svd_clutter_filter(pipeline::compound(cube), cfg);
        RfEnsemble dn2 = baselines::st_nlm(full, ncfg);
        map = doppler::power_doppler(pipeline::hilbert_analytic(dn2));
      } else {
        std::cerr << "baseline: unknown kind '" << base_kind
                  << "' (conventional | ap | stnlm)\n";
        return 2;
      }
      if (!base_out.empty()) write_map_urfc(map, base_out);
      if (!base_image.empty())
        io::write_pgm(doppler::log_compress(map, base_dr), base_image);
    } else if (*met) {
      DopplerMap map = map_from_urfc(met_map);
      RoiSet rois = io::read_rois(met_rois);
      std::vector<MethodRow> rows(1);
      rows[0].method = "map";
      rows[0].dc = 1.0;
      rows[0].metrics = metrics::evaluate_map(map, rois);
      std::string table = metrics_table_text(rows);
      std::cout << table;
      if (!met_out.empty()) io::write_text_file(met_out, table);
    } else if (*exp) {
      Config c = load_config(exp_config);
      apply_seed(c, seed);
      ExperimentConfig ecfg = experiment_from_config(c);
      if (!exp_out.empty()) ecfg.out_dir = exp_out;
      ExperimentReport report = run_experiment(ecfg);
      std::cout << metrics_table_text(report.rows);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

} // namespace umi::cli
