#pragma once

#include <string>
#include <vector>

#include "umi/baselines.hpp"
#include "umi/config.hpp"
#include "umi/denoiser.hpp"
#include "umi/metrics.hpp"
#include "umi/phantom.hpp"
#include "umi/pipeline.hpp"

namespace umi {

struct ExperimentConfig {
  phantom::PhantomSpec phantom;
  pipeline::SvdFilterConfig svd;      // full-angle evaluation chain
  pipeline::SvdFilterConfig svd_pair; // training-pair construction
  int interp_factor = 1;
  denoiser::UNetConfig unet;
  denoiser::TrainConfig train;
  int train_frame_stride = 10; // paper: one every 10 frames
  baselines::StNlmConfig stnlm;
  std::vector<std::string> methods = {"conventional", "ap", "stnlm", "ha2ha"};
  std::vector<double> dc_sweep;  // empty: evaluate at phantom.duty_cycle only
  std::string out_dir = "out";
  double display_dynamic_range_db = 40.0;
  bool write_cdi = true;
  uint64_t seed = 1;
};

struct MethodRow {
  std::string method;
  double dc = 1.0;
  metrics::MapMetrics metrics;
};

struct ExperimentReport {
  std::vector<MethodRow> rows;
  std::vector<denoiser::EpochStat> history;
};

// Renders a training phantom, trains once, then evaluates every configured
// method on a held-out phantom at each duty-cycle level (training reused).
// Writes images, metric tables, the loss log and a checkpoint into out_dir.
// Deterministic for a given seed.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

std::string metrics_table_text(const std::vector<MethodRow>& rows);
std::string metrics_table_tsv(const std::vector<MethodRow>& rows);

// Config-file bindings (dotted keys; see README for the key list).
phantom::PhantomSpec phantom_from_config(const Config& c);
ExperimentConfig experiment_from_config(const Config& c);

} // namespace umi
