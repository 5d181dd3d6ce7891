#pragma once

#include <optional>
#include <utility>

#include "umi/types.hpp"

namespace umi::pipeline {

// Truncated-SVD clutter filter configuration. k_low leading singular
// components are zeroed; components at and above k_high (when set) are
// zeroed as well. k_low = 0 with no k_high is the identity.
struct SvdFilterConfig {
  int k_low = 0;
  std::optional<int> k_high;

  void validate(int n_time, int n_pixels) const;
};

// Raised when the SVD backend fails to converge.
struct SvdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Splits a cube into the even-indexed (0,2,4,...) and odd-indexed
// (1,3,5,...) angle subsets, in that order. Requires n_angle >= 2.
std::pair<AngleRfCube, AngleRfCube> split_angles(const AngleRfCube& cube);

// Pixelwise mean across the angle axis. Provenance is taken from the
// cube's subset identity.
RfEnsemble compound(const AngleRfCube& cube);

// Multiplies the lateral sample count by `factor` using linear
// interpolation between adjacent columns; positions past the last source
// column replicate it. Lateral pitch metadata is divided by `factor`.
RfEnsemble lateral_interpolate(const RfEnsemble& ens, int factor);

// Casorati-matrix clutter filter: rows are flattened axial x lateral
// pixels, columns are time, so cutoffs count temporal singular components.
RfEnsemble svd_clutter_filter(const RfEnsemble& ens, const SvdFilterConfig& cfg);

// Analytic signal along the axial axis per (time, lateral) column:
// DC and Nyquist bins kept, positive frequencies doubled, negative zeroed.
IqEnsemble hilbert_analytic(const RfEnsemble& ens);

// Y1 from the even-indexed subset, Y2 from the odd-indexed subset, each
// compounded, laterally interpolated and SVD-filtered independently with
// the same configuration.
std::pair<RfEnsemble, RfEnsemble> prepare_pair(const AngleRfCube& cube,
                                               const SvdFilterConfig& cfg,
                                               int interp_factor);

} // namespace umi::pipeline
