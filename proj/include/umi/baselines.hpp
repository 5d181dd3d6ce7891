#pragma once

#include <optional>

#include "umi/pipeline.hpp"
#include "umi/types.hpp"

namespace umi::baselines {

// Spatiotemporal non-local means on axial-temporal planes. Windows are
// (axial x temporal) and odd-sized; the search window must cover the
// similarity window.
struct StNlmConfig {
  int sim_axial = 11, sim_temporal = 11;
  int search_axial = 23, search_temporal = 23;
  // Smoothing parameter in linear amplitude units; defaults to the noise
  // estimate when unset.
  std::optional<double> h;
  // Overrides the internal noise estimate (useful for tests).
  std::optional<double> noise_sigma;

  // Search window = twice the similarity window, rounded up to odd.
  static StNlmConfig from_similarity(int sim_axial, int sim_temporal);
  void validate() const;
};

// Full-angle compound -> SVD filter -> Hilbert -> power Doppler.
DopplerMap conventional(const AngleRfCube& cube, const pipeline::SvdFilterConfig& cfg);

// Odd/even split, each compounded and filtered, then conjugate-multiplied.
DopplerMap angular_processing(const AngleRfCube& cube, const pipeline::SvdFilterConfig& cfg);

// Robust noise std: median |temporal difference| / (sqrt(2) * 0.6745).
double estimate_noise_sigma(const RfEnsemble& ens);

// Non-local means denoising of each axial-temporal plane with weights
// exp(-max(d^2 - 2 sigma^2, 0) / h^2) and mirror-padded borders.
RfEnsemble st_nlm(const RfEnsemble& ens, const StNlmConfig& cfg);

} // namespace umi::baselines
