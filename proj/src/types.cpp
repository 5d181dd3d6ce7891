#include "umi/types.hpp"

namespace umi {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::full: return "full";
    case Provenance::odd: return "odd";
    case Provenance::even: return "even";
  }
  return "full";
}

void AngleRfCube::validate() const {
  if (n_angle < 1 || n_time < 1 || n_axial < 1 || n_lateral < 1)
    throw std::invalid_argument("AngleRfCube: all dims must be >= 1");
  if (angles_deg.size() != size_t(n_angle))
    throw std::invalid_argument("AngleRfCube: angle list length mismatch");
  for (size_t i = 1; i < angles_deg.size(); ++i)
    if (!(angles_deg[i] > angles_deg[i - 1]))
      throw std::invalid_argument("AngleRfCube: angle list must be strictly increasing");
  if (samples.size() != size())
    throw std::invalid_argument("AngleRfCube: sample buffer size mismatch");
}

void RfEnsemble::validate() const {
  if (n_time < 1 || n_axial < 1 || n_lateral < 1)
    throw std::invalid_argument("RfEnsemble: all dims must be >= 1");
  if (samples.size() != size())
    throw std::invalid_argument("RfEnsemble: sample buffer size mismatch");
}

void RoiSet::validate() const {
  size_t n = size_t(rows) * cols;
  if (blood.size() != n || background.size() != n || noise.size() != n)
    throw std::invalid_argument("RoiSet: mask size mismatch");
  size_t nb = 0, ng = 0, nn = 0;
  for (size_t i = 0; i < n; ++i) {
    int set = (blood[i] != 0) + (background[i] != 0) + (noise[i] != 0);
    if (set > 1) throw std::invalid_argument("RoiSet: masks must be pairwise disjoint");
    nb += blood[i] != 0;
    ng += background[i] != 0;
    nn += noise[i] != 0;
  }
  if (nb == 0 || ng == 0 || nn == 0)
    throw std::invalid_argument("RoiSet: every mask must be nonempty");
}

} // namespace umi
