#pragma once

#include <string>
#include <variant>

#include "umi/types.hpp"

namespace umi::io {

// URFC container, version 1. Little-endian throughout.
//
//   bytes 0-3   magic "URFC"
//   byte  4     version (1)
//   byte  5     kind: 0 = angle cube, 1 = real ensemble, 2 = complex ensemble
//   byte  6     provenance: 0 full, 1 odd, 2 even
//   byte  7     reserved (0)
//   u32 x 4     n_angle (1 for ensembles), n_time, n_axial, n_lateral
//   f32 x 6     f0, fs, prf, c, pitch_axial, pitch_lateral
//   f32 x n_angle  steering angles in degrees (single 0 entry for ensembles)
//   payload     f32 samples, lateral fastest, then axial, time, angle;
//               complex payloads interleave re,im.

using UrfcData = std::variant<AngleRfCube, RfEnsemble, IqEnsemble>;

void write_urfc(const AngleRfCube& cube, const std::string& path);
void write_urfc(const RfEnsemble& ens, const std::string& path);
void write_urfc(const IqEnsemble& ens, const std::string& path);

UrfcData read_urfc(const std::string& path);
AngleRfCube read_urfc_cube(const std::string& path);
RfEnsemble read_urfc_ensemble(const std::string& path);
IqEnsemble read_urfc_iq(const std::string& path);

// Binary PGM (P5) / PPM (P6), 8 bit.
void write_pgm(const GrayImage& img, const std::string& path);
GrayImage read_pgm(const std::string& path);
void write_ppm(const RgbImage& img, const std::string& path);

// ROI masks as three PGM files (255 = inside) plus a plain-text sidecar.
void write_rois(const RoiSet& rois, const std::string& dir,
                const std::string& sidecar_text = "");
RoiSet read_rois(const std::string& dir);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

} // namespace umi::io
