#include "umi/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace umi::metrics {

RoiStats roi_stats(const DopplerMap& map, const RoiSet& rois) {
  if (rois.rows != map.n_axial || rois.cols != map.n_lateral)
    throw std::invalid_argument("roi_stats: mask dims do not match the map");
  rois.validate();

  double sum_b = 0.0, sum_g = 0.0, sum_n = 0.0, sum_n2 = 0.0;
  size_t nb = 0, ng = 0, nn = 0;
  for (size_t i = 0; i < map.intensity.size(); ++i) {
    double v = map.intensity[i];
    if (rois.blood[i]) {
      sum_b += v;
      ++nb;
    } else if (rois.background[i]) {
      sum_g += v;
      ++ng;
    } else if (rois.noise[i]) {
      sum_n += v;
      sum_n2 += v * v;
      ++nn;
    }
  }
  RoiStats s;
  s.mean_blood = sum_b / double(nb);
  s.mean_background = sum_g / double(ng);
  s.mean_noise = sum_n / double(nn);
  double var = sum_n2 / double(nn) - s.mean_noise * s.mean_noise;
  s.std_noise = std::sqrt(std::max(0.0, var));
  return s;
}

double cnr(const RoiStats& stats) {
  if (!(stats.std_noise > 0.0))
    throw std::domain_error("cnr: noise standard deviation is zero");
  if (!(stats.mean_blood > stats.mean_background))
    throw std::domain_error("cnr: no contrast (blood mean <= background mean)");
  return 10.0 * std::log10((stats.mean_blood - stats.mean_background) / stats.std_noise);
}

double snr(const RoiStats& stats) {
  if (!(stats.std_noise > 0.0))
    throw std::domain_error("snr: noise standard deviation is zero");
  if (!(stats.mean_blood > 0.0))
    throw std::domain_error("snr: blood mean is not positive");
  return 10.0 * std::log10(stats.mean_blood / stats.std_noise);
}

double bnp(const RoiStats& stats) {
  if (!(stats.mean_noise > 0.0)) return kBnpSentinelDb;
  return std::max(kBnpSentinelDb, 10.0 * std::log10(stats.mean_noise));
}

MapMetrics evaluate_map(const DopplerMap& map, const RoiSet& rois) {
  DopplerMap norm = map;
  double peak = 0.0;
  for (double v : norm.intensity) peak = std::max(peak, v);
  if (peak > 0.0)
    for (double& v : norm.intensity) v /= peak;
  RoiStats s = roi_stats(norm, rois);

  MapMetrics m;
  m.bnp_db = bnp(s);
  try {
    m.cnr_db = cnr(s);
    m.cnr_valid = true;
  } catch (const std::domain_error&) {
  }
  try {
    m.snr_db = snr(s);
    m.snr_valid = true;
  } catch (const std::domain_error&) {
  }
  return m;
}

} // namespace umi::metrics
