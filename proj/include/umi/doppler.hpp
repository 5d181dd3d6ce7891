#pragma once

#include "umi/types.hpp"

namespace umi::doppler {

// Per-pixel temporal mean of |s|^2.
DopplerMap power_doppler(const IqEnsemble& iq);

// Kasai lag-1 autocorrelation velocity estimate:
//   R1 = sum_t s(t+1) conj(s(t)),  v = v_nyq * arg(R1) / pi.
// Pixels with R1 == 0 map to velocity 0. Requires n_time >= 2.
VelocityMap color_doppler(const IqEnsemble& iq);

// Angular-processing power map: temporal mean of Re{s_odd conj(s_even)},
// clamped below at zero before any log compression.
DopplerMap power_doppler_ap(const IqEnsemble& odd, const IqEnsemble& even);

// Normalizes to the map maximum, converts to dB, clips to [-DR, 0] and maps
// affinely to 0..255. An all-zero map yields an all-zero image.
GrayImage log_compress(const DopplerMap& map, double dynamic_range_db);

// Symmetric red-blue bidirectional colormap: red toward the transducer,
// blue away, black at zero.
RgbImage velocity_to_rgb(const VelocityMap& map);

} // namespace umi::doppler
