#pragma once

#include "umi/types.hpp"

namespace umi::metrics {

struct RoiStats {
  double mean_blood = 0.0;
  double mean_background = 0.0;
  double mean_noise = 0.0;
  double std_noise = 0.0; // population standard deviation
};

// Arithmetic means over each mask; population std over the noise mask.
RoiStats roi_stats(const DopplerMap& map, const RoiSet& rois);

// 10 log10((mean_blood - mean_background) / std_noise). Throws domain_error
// when std_noise is zero or there is no contrast.
double cnr(const RoiStats& stats);

// 10 log10(mean_blood / std_noise).
double snr(const RoiStats& stats);

// 10 log10(mean_noise); a zero-intensity noise region reports the sentinel
// minimum of -300 dB. Meaningful on maps normalized to their maximum.
double bnp(const RoiStats& stats);

constexpr double kBnpSentinelDb = -300.0;

struct MapMetrics {
  double cnr_db = 0.0;
  double snr_db = 0.0;
  double bnp_db = 0.0;
  bool cnr_valid = false; // false when the map has no blood contrast
  bool snr_valid = false;
};

// Normalizes the map to its maximum (so BNP is relative), then computes
// all three metrics. Invalid CNR/SNR are flagged rather than thrown.
MapMetrics evaluate_map(const DopplerMap& map, const RoiSet& rois);

} // namespace umi::metrics
