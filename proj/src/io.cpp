#include "umi/io.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace umi::io {

namespace {

constexpr char kMagic[4] = {'U', 'R', 'F', 'C'};
constexpr uint8_t kVersion = 1;
// Guard against absurd headers before allocating.
constexpr uint64_t kMaxSamples = uint64_t(1) << 31;

void put_u32(std::string& out, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.append(b, 4);
}

void put_f32(std::string& out, double v) {
  float f = float(v);
  uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(out, u);
}

struct Reader {
  const uint8_t* p;
  size_t n;
  size_t pos = 0;
  void need(size_t k, const char* what) {
    if (pos + k > n) throw std::runtime_error(std::string("URFC: truncated ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return p[pos++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = uint32_t(p[pos]) | uint32_t(p[pos + 1]) << 8 |
                 uint32_t(p[pos + 2]) << 16 | uint32_t(p[pos + 3]) << 24;
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    uint32_t u = u32(what);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
};

std::string header_bytes(uint8_t kind, Provenance prov, uint32_t na, uint32_t nt,
                         uint32_t nz, uint32_t nx, const SeqMeta& meta,
                         const std::vector<double>& angles) {
  std::string out;
  out.append(kMagic, 4);
  out.push_back(char(kVersion));
  out.push_back(char(kind));
  out.push_back(char(uint8_t(prov)));
  out.push_back(char(0));
  put_u32(out, na);
  put_u32(out, nt);
  put_u32(out, nz);
  put_u32(out, nx);
  put_f32(out, meta.f0);
  put_f32(out, meta.fs);
  put_f32(out, meta.prf);
  put_f32(out, meta.c);
  put_f32(out, meta.pitch_axial);
  put_f32(out, meta.pitch_lateral);
  for (double a : angles) put_f32(out, a);
  return out;
}

void write_file(const std::string& path, const std::string& header,
                const double* samples, size_t count) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("URFC: cannot open for writing: " + path);
  f.write(header.data(), std::streamsize(header.size()));
  std::vector<float> buf(count);
  for (size_t i = 0; i < count; ++i) buf[i] = float(samples[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(count * 4));
  if (!f) throw std::runtime_error("URFC: write failed: " + path);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

} // namespace

void write_urfc(const AngleRfCube& cube, const std::string& path) {
  cube.validate();
  std::string hdr = header_bytes(0, cube.subset, cube.n_angle, cube.n_time,
                                 cube.n_axial, cube.n_lateral, cube.meta,
                                 cube.angles_deg);
  write_file(path, hdr, cube.samples.data(), cube.samples.size());
}

void write_urfc(const RfEnsemble& ens, const std::string& path) {
  ens.validate();
  std::string hdr = header_bytes(1, ens.provenance, 1, ens.n_time, ens.n_axial,
                                 ens.n_lateral, ens.meta, {0.0});
  write_file(path, hdr, ens.samples.data(), ens.samples.size());
}

void write_urfc(const IqEnsemble& ens, const std::string& path) {
  std::string hdr = header_bytes(2, ens.provenance, 1, ens.n_time, ens.n_axial,
                                 ens.n_lateral, ens.meta, {0.0});
  // Interleaved re,im; complex<double> is layout-compatible.
  write_file(path, hdr, reinterpret_cast<const double*>(ens.samples.data()),
             ens.samples.size() * 2);
}

UrfcData read_urfc(const std::string& path) {
  std::string raw = slurp(path);
  Reader r{reinterpret_cast<const uint8_t*>(raw.data()), raw.size()};

  r.need(4, "magic");
  if (std::memcmp(raw.data(), kMagic, 4) != 0)
    throw std::runtime_error("URFC: bad magic in " + path);
  r.pos = 4;
  uint8_t version = r.u8("version");
  if (version != kVersion)
    throw std::runtime_error("URFC: unsupported version " + std::to_string(version));
  uint8_t kind = r.u8("kind");
  if (kind > 2) throw std::runtime_error("URFC: unknown kind byte");
  uint8_t prov = r.u8("provenance");
  if (prov > 2) throw std::runtime_error("URFC: unknown provenance byte");
  r.u8("reserved");

  uint32_t na = r.u32("dims"), nt = r.u32("dims"), nz = r.u32("dims"),
           nx = r.u32("dims");
  if (na == 0 || nt == 0 || nz == 0 || nx == 0)
    throw std::runtime_error("URFC: zero dimension");
  uint64_t count = na;
  for (uint64_t d : {uint64_t(nt), uint64_t(nz), uint64_t(nx)}) {
    if (count > kMaxSamples / d) throw std::runtime_error("URFC: dim overflow");
    count *= d;
  }
  if (count > kMaxSamples) throw std::runtime_error("URFC: dim overflow");
  if (kind != 0 && na != 1)
    throw std::runtime_error("URFC: ensemble must have n_angle = 1");

  SeqMeta meta;
  meta.f0 = r.f32("metadata");
  meta.fs = r.f32("metadata");
  meta.prf = r.f32("metadata");
  meta.c = r.f32("metadata");
  meta.pitch_axial = r.f32("metadata");
  meta.pitch_lateral = r.f32("metadata");
  std::vector<double> angles(na);
  for (uint32_t i = 0; i < na; ++i) angles[i] = r.f32("angle list");

  uint64_t values = count * (kind == 2 ? 2 : 1);
  if (r.n - r.pos != values * 4)
    throw std::runtime_error("URFC: truncated payload in " + path);
  std::vector<float> buf(values);
  std::memcpy(buf.data(), r.p + r.pos, values * 4);

  if (kind == 0) {
    AngleRfCube cube;
    cube.meta = meta;
    cube.angles_deg = angles;
    cube.subset = Provenance(prov);
    cube.n_angle = int(na);
    cube.n_time = int(nt);
    cube.n_axial = int(nz);
    cube.n_lateral = int(nx);
    cube.samples.resize(count);
    for (uint64_t i = 0; i < count; ++i) cube.samples[i] = buf[i];
    cube.validate();
    return cube;
  }
  if (kind == 1) {
    RfEnsemble ens;
    ens.meta = meta;
    ens.provenance = Provenance(prov);
    ens.n_time = int(nt);
    ens.n_axial = int(nz);
    ens.n_lateral = int(nx);
    ens.samples.resize(count);
    for (uint64_t i = 0; i < count; ++i) ens.samples[i] = buf[i];
    return ens;
  }
  IqEnsemble ens;
  ens.meta = meta;
  ens.provenance = Provenance(prov);
  ens.n_time = int(nt);
  ens.n_axial = int(nz);
  ens.n_lateral = int(nx);
  ens.samples.resize(count);
  for (uint64_t i = 0; i < count; ++i)
    ens.samples[i] = {double(buf[2 * i]), double(buf[2 * i + 1])};
  return ens;
}

AngleRfCube read_urfc_cube(const std::string& path) {
  UrfcData d = read_urfc(path);
  if (auto* c = std::get_if<AngleRfCube>(&d)) return std::move(*c);
  throw std::runtime_error("URFC: expected an angle cube in " + path);
}

RfEnsemble read_urfc_ensemble(const std::string& path) {
  UrfcData d = read_urfc(path);
  if (auto* e = std::get_if<RfEnsemble>(&d)) return std::move(*e);
  throw std::runtime_error("URFC: expected a real ensemble in " + path);
}

IqEnsemble read_urfc_iq(const std::string& path) {
  UrfcData d = read_urfc(path);
  if (auto* e = std::get_if<IqEnsemble>(&d)) return std::move(*e);
  throw std::runtime_error("URFC: expected a complex ensemble in " + path);
}

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("PGM: cannot open for writing: " + path);
  f << "P5\n" << img.cols << " " << img.rows << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          std::streamsize(img.pixels.size()));
  if (!f) throw std::runtime_error("PGM: write failed: " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("PGM: cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw std::runtime_error("PGM: not a binary graymap: " + path);
  int cols = 0, rows = 0, maxval = 0;
  f >> cols >> rows >> maxval;
  if (cols <= 0 || rows <= 0 || maxval != 255)
    throw std::runtime_error("PGM: unsupported header in " + path);
  f.get(); // single whitespace after maxval
  GrayImage img;
  img.rows = rows;
  img.cols = cols;
  img.pixels.resize(size_t(rows) * cols);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         std::streamsize(img.pixels.size()));
  if (!f) throw std::runtime_error("PGM: truncated pixel data in " + path);
  return img;
}

void write_ppm(const RgbImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("PPM: cannot open for writing: " + path);
  f << "P6\n" << img.cols << " " << img.rows << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          std::streamsize(img.pixels.size()));
  if (!f) throw std::runtime_error("PPM: write failed: " + path);
}

namespace {
GrayImage mask_to_image(const std::vector<uint8_t>& mask, int rows, int cols) {
  GrayImage img;
  img.rows = rows;
  img.cols = cols;
  img.pixels.resize(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] ? 255 : 0;
  return img;
}
} // namespace

void write_rois(const RoiSet& rois, const std::string& dir,
                const std::string& sidecar_text) {
  std::filesystem::create_directories(dir);
  write_pgm(mask_to_image(rois.blood, rois.rows, rois.cols), dir + "/blood.pgm");
  write_pgm(mask_to_image(rois.background, rois.rows, rois.cols), dir + "/background.pgm");
  write_pgm(mask_to_image(rois.noise, rois.rows, rois.cols), dir + "/noise.pgm");
  std::ostringstream meta;
  meta << "rows = " << rois.rows << "\n"
       << "cols = " << rois.cols << "\n";
  if (!sidecar_text.empty()) meta << sidecar_text;
  write_text_file(dir + "/rois.txt", meta.str());
}

RoiSet read_rois(const std::string& dir) {
  GrayImage b = read_pgm(dir + "/blood.pgm");
  GrayImage g = read_pgm(dir + "/background.pgm");
  GrayImage n = read_pgm(dir + "/noise.pgm");
  if (g.rows != b.rows || g.cols != b.cols || n.rows != b.rows || n.cols != b.cols)
    throw std::runtime_error("ROI masks differ in size in " + dir);
  RoiSet rois;
  rois.rows = b.rows;
  rois.cols = b.cols;
  auto to_mask = [](const GrayImage& img) {
    std::vector<uint8_t> m(img.pixels.size());
    for (size_t i = 0; i < m.size(); ++i) m[i] = img.pixels[i] >= 128 ? 1 : 0;
    return m;
  };
  rois.blood = to_mask(b);
  rois.background = to_mask(g);
  rois.noise = to_mask(n);
  rois.validate();
  return rois;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(text.data(), std::streamsize(text.size()));
}

std::string read_text_file(const std::string& path) { return slurp(path); }

} // namespace umi::io
