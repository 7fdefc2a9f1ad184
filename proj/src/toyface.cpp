#include "psr/toyface.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "psr/png_io.hpp"
#include "psr/structure_teacher.hpp"

namespace psr {

namespace fs = std::filesystem;
using nlohmann::json;

int64_t ToyPortrait::face_pixel_count() const {
  int64_t n = 0;
  for (double v : region_map.data) n += v != kRegionBackground;
  return n;
}

void ToyPortrait::validate() const {
  image.validate();
  int64_t h = image.height(), w = image.width();
  if (region_map.shape != std::vector<int64_t>{h, w})
    throw std::invalid_argument("portrait: region map shape mismatch");
  for (double v : region_map.data) {
    int label = static_cast<int>(v);
    if (static_cast<double>(label) != v || label < kRegionBackground || label > kRegionMole)
      throw std::invalid_argument("portrait: invalid region label");
  }
  if (normal_map.shape != std::vector<int64_t>{h, w, 3})
    throw std::invalid_argument("portrait: normal map shape mismatch");
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double nx = normal_map.at(y, x, 0), ny = normal_map.at(y, x, 1), nz = normal_map.at(y, x, 2);
      double len = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (std::abs(len - 1.0) > 1e-4)
        throw std::invalid_argument("portrait: normal not unit length");
    }
}

void LightSpec::validate() const {
  double len = std::sqrt(direction[0] * direction[0] + direction[1] * direction[1] +
                         direction[2] * direction[2]);
  if (std::abs(len - 1.0) > 1e-6) throw std::invalid_argument("light: direction not unit length");
  if (!(ambient >= 0.1 && ambient <= 0.9)) throw std::invalid_argument("light: ambient out of range");
  if (!(intensity >= 0.2 && intensity <= 1.5))
    throw std::invalid_argument("light: intensity out of range");
}

namespace {

struct Ellipse {
  double cx, cy, a, b;
  bool contains(double x, double y) const {
    double px = (x - cx) / a, py = (y - cy) / b;
    return px * px + py * py <= 1.0;
  }
};

void fill_ellipse(ToyPortrait& p, const Ellipse& e, int label, const double rgb[3]) {
  int64_t s = p.size();
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x)
      if (e.contains(static_cast<double>(x), static_cast<double>(y))) {
        p.region_map.at(y, x) = label;
        for (int c = 0; c < 3; ++c) p.image.at(y, x, c) = rgb[c];
      }
}

void build_normals(ToyPortrait& p, const Ellipse& face) {
  int64_t s = p.size();
  double c_depth = 0.9 * std::min(face.a, face.b);
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x) {
      double nx = 0.0, ny = 0.0, nz = 1.0;
      double px = (static_cast<double>(x) - face.cx) / face.a;
      double py = (static_cast<double>(y) - face.cy) / face.b;
      double rr = px * px + py * py;
      if (p.region_map.at(y, x) != kRegionBackground && rr < 1.0) {
        // Ellipsoid surface normal: gradient of (x/a)^2+(y/b)^2+(z/c)^2.
        double z = c_depth * std::sqrt(1.0 - rr);
        nx = px / face.a;
        ny = py / face.b;
        nz = z / (c_depth * c_depth);
        double len = std::sqrt(nx * nx + ny * ny + nz * nz);
        nx /= len;
        ny /= len;
        nz /= len;
      }
      p.normal_map.at(y, x, 0) = nx;
      p.normal_map.at(y, x, 1) = ny;
      p.normal_map.at(y, x, 2) = nz;
    }
}

}  // namespace

ToyPortrait generate_toy_portrait(int64_t seed, int64_t size) {
  if (size != 64 && size != 128 && size != 256)
    throw std::invalid_argument("generate_toy_portrait: size must be 64, 128 or 256");
  Rng rng(Rng::mix64(0x70f0faceULL, static_cast<uint64_t>(seed)));
  double s = static_cast<double>(size);

  ToyPortrait p;
  p.image = ImageTensor(size, size, 3, ValueRange::Unit);
  p.region_map = Tensor({size, size});
  p.normal_map = Tensor({size, size, 3});

  // Background: muted color with a vertical gradient.
  double bg[3] = {rng.uniform(0.10, 0.32), rng.uniform(0.10, 0.32), rng.uniform(0.12, 0.35)};
  double bg_slope = rng.uniform(-0.06, 0.06);
  for (int64_t y = 0; y < size; ++y) {
    double shade = bg_slope * (static_cast<double>(y) / s - 0.5);
    for (int64_t x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        p.image.at(y, x, c) = std::clamp(bg[c] + shade, 0.0, 1.0);
  }

  Ellipse face{s * rng.uniform(0.47, 0.53), s * rng.uniform(0.49, 0.55),
               s * rng.uniform(0.30, 0.36), s * rng.uniform(0.35, 0.42)};
  double skin_r = rng.uniform(0.58, 0.88);
  double skin[3] = {skin_r, skin_r * rng.uniform(0.72, 0.86), skin_r * rng.uniform(0.55, 0.72)};
  fill_ellipse(p, face, kRegionSkin, skin);

  // Slight baked frontal shading so the face is not flat.
  build_normals(p, face);
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x)
      if (p.region_map.at(y, x) == kRegionSkin) {
        double shade = 0.86 + 0.14 * p.normal_map.at(y, x, 2);
        for (int c = 0; c < 3; ++c) p.image.at(y, x, c) *= shade;
      }

  // Eyes.
  double eye_dx = face.a * rng.uniform(0.34, 0.44);
  double eye_y = face.cy - face.b * rng.uniform(0.16, 0.26);
  double eye_a = face.a * rng.uniform(0.10, 0.15), eye_b = face.b * rng.uniform(0.05, 0.08);
  double eye_shade = rng.uniform(0.05, 0.20);
  double eye_col[3] = {eye_shade, eye_shade, eye_shade * rng.uniform(1.0, 1.6)};
  fill_ellipse(p, {face.cx - eye_dx, eye_y, eye_a, eye_b}, kRegionEyes, eye_col);
  fill_ellipse(p, {face.cx + eye_dx, eye_y, eye_a, eye_b}, kRegionEyes, eye_col);

  // Brows: short rows of 1 px strokes above each eye.
  double brow_col[3] = {rng.uniform(0.04, 0.15), rng.uniform(0.03, 0.10), rng.uniform(0.02, 0.08)};
  double brow_y = eye_y - face.b * rng.uniform(0.12, 0.18);
  int brow_half = static_cast<int>(std::lround(eye_a * rng.uniform(1.0, 1.4)));
  double brow_tilt = rng.uniform(-0.25, 0.25);
  for (int side = -1; side <= 1; side += 2) {
    double bx = face.cx + side * eye_dx;
    for (int dx = -brow_half; dx <= brow_half; ++dx) {
      int64_t x = static_cast<int64_t>(std::lround(bx + dx));
      int64_t y = static_cast<int64_t>(std::lround(brow_y + side * brow_tilt * dx));
      // Hair strokes: every other column extends one pixel down.
      int thick = (dx & 1) ? 2 : 1;
      for (int t = 0; t < thick; ++t) {
        int64_t yy = y + t;
        if (yy >= 0 && yy < size && x >= 0 && x < size &&
            p.region_map.at(yy, x) == kRegionSkin) {
          p.region_map.at(yy, x) = kRegionBrows;
          for (int c = 0; c < 3; ++c) p.image.at(yy, x, c) = brow_col[c];
        }
      }
    }
  }

  // Mouth.
  double mouth_col[3] = {rng.uniform(0.45, 0.70), rng.uniform(0.15, 0.30), rng.uniform(0.18, 0.32)};
  fill_ellipse(p,
               {face.cx, face.cy + face.b * rng.uniform(0.42, 0.55),
                face.a * rng.uniform(0.20, 0.30), face.b * rng.uniform(0.035, 0.06)},
               kRegionMouth, mouth_col);

  // Moles: 0-3 spots of radius 1-3 px on skin.
  int n_moles = static_cast<int>(rng.uniform_int(0, 3));
  double mole_col[3] = {rng.uniform(0.10, 0.25), rng.uniform(0.06, 0.16), rng.uniform(0.04, 0.12)};
  for (int m = 0; m < n_moles; ++m) {
    for (int attempt = 0; attempt < 32; ++attempt) {
      double ang = rng.uniform(0.0, 6.2831853);
      double rad = std::sqrt(rng.uniform(0.05, 0.85));
      int64_t mx = static_cast<int64_t>(std::lround(face.cx + rad * face.a * std::cos(ang)));
      int64_t my = static_cast<int64_t>(std::lround(face.cy + rad * face.b * std::sin(ang)));
      if (mx < 1 || my < 1 || mx >= size - 1 || my >= size - 1) continue;
      if (p.region_map.at(my, mx) != kRegionSkin) continue;
      int mr = static_cast<int>(rng.uniform_int(1, 3));
      double rr = 0.5 * mr;  // radius in px; 1 px mole is a single pixel
      for (int64_t y = my - mr; y <= my + mr; ++y)
        for (int64_t x = mx - mr; x <= mx + mr; ++x) {
          double d2 = static_cast<double>((x - mx) * (x - mx) + (y - my) * (y - my));
          if (d2 <= rr * rr && y >= 0 && y < size && x >= 0 && x < size &&
              p.region_map.at(y, x) == kRegionSkin) {
            p.region_map.at(y, x) = kRegionMole;
            for (int c = 0; c < 3; ++c) p.image.at(y, x, c) = mole_col[c];
          }
        }
      break;
    }
  }

  return p;
}

ToyPortrait portrait_from_image(const ImageTensor& img, int64_t box_x, int64_t box_y,
                                int64_t box_w, int64_t box_h) {
  if (img.channels() != 3) throw std::invalid_argument("portrait_from_image: RGB input required");
  if (box_w < 4 || box_h < 4 || box_x < 0 || box_y < 0 || box_x + box_w > img.width() ||
      box_y + box_h > img.height())
    throw std::invalid_argument("portrait_from_image: face box out of bounds");
  ToyPortrait p;
  p.image = img;
  p.region_map = Tensor({img.height(), img.width()});
  p.normal_map = Tensor({img.height(), img.width(), 3});
  Ellipse face{static_cast<double>(box_x) + static_cast<double>(box_w) / 2.0,
               static_cast<double>(box_y) + static_cast<double>(box_h) / 2.0,
               static_cast<double>(box_w) / 2.0, static_cast<double>(box_h) / 2.0};
  for (int64_t y = 0; y < img.height(); ++y)
    for (int64_t x = 0; x < img.width(); ++x)
      if (face.contains(static_cast<double>(x), static_cast<double>(y)))
        p.region_map.at(y, x) = kRegionSkin;
  build_normals(p, face);
  return p;
}

ImageTensor synth_relight(const ToyPortrait& p, const LightSpec& light) {
  light.validate();
  int64_t s = p.size();
  ImageTensor out = p.image;
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x) {
      double ndotl = p.normal_map.at(y, x, 0) * light.direction[0] +
                     p.normal_map.at(y, x, 1) * light.direction[1] +
                     p.normal_map.at(y, x, 2) * light.direction[2];
      double gain = light.ambient + light.intensity * std::max(0.0, ndotl);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = std::clamp(p.image.at(y, x, c) * gain, 0.0, 1.0);
    }
  return out;
}

namespace {

// One random cut; returns a predicate over pixel coordinates.
enum class CutKind { HalfPlane, EllipseCut, Polygon };

struct Cut {
  CutKind kind;
  double p0x, p0y, nx, ny;           // half-plane
  Ellipse ell{0, 0, 1, 1};           // ellipse
  double vx[4], vy[4];               // polygon
  int nv = 0;

  bool contains(double x, double y) const {
    switch (kind) {
      case CutKind::HalfPlane:
        return (x - p0x) * nx + (y - p0y) * ny >= 0.0;
      case CutKind::EllipseCut:
        return ell.contains(x, y);
      case CutKind::Polygon: {
        bool inside = false;
        for (int i = 0, j = nv - 1; i < nv; j = i++) {
          if ((vy[i] > y) != (vy[j] > y) &&
              x < (vx[j] - vx[i]) * (y - vy[i]) / (vy[j] - vy[i]) + vx[i])
            inside = !inside;
        }
        return inside;
      }
    }
    return false;
  }
};

Cut random_cut(Rng& rng, double s) {
  Cut cut;
  int kind = static_cast<int>(rng.uniform_int(0, 2));
  if (kind == 0) {
    cut.kind = CutKind::HalfPlane;
    cut.p0x = rng.uniform(0.30, 0.70) * s;
    cut.p0y = rng.uniform(0.30, 0.70) * s;
    double ang = rng.uniform(0.0, 6.2831853);
    cut.nx = std::cos(ang);
    cut.ny = std::sin(ang);
  } else if (kind == 1) {
    cut.kind = CutKind::EllipseCut;
    cut.ell = {rng.uniform(0.25, 0.75) * s, rng.uniform(0.25, 0.75) * s,
               rng.uniform(0.12, 0.40) * s, rng.uniform(0.12, 0.40) * s};
  } else {
    cut.kind = CutKind::Polygon;
    cut.nv = static_cast<int>(rng.uniform_int(3, 4));
    double cx = rng.uniform(0.30, 0.70) * s, cy = rng.uniform(0.30, 0.70) * s;
    double base = rng.uniform(0.0, 6.2831853);
    for (int i = 0; i < cut.nv; ++i) {
      double ang = base + 6.2831853 * i / cut.nv + rng.uniform(-0.3, 0.3);
      double rad = rng.uniform(0.15, 0.45) * s;
      cut.vx[i] = cx + rad * std::cos(ang);
      cut.vy[i] = cy + rad * std::sin(ang);
    }
  }
  return cut;
}

}  // namespace

ShadowMask random_facial_mask(const ToyPortrait& p, int64_t seed) {
  int64_t s = p.size();
  int64_t face_px = p.face_pixel_count();
  Rng base(Rng::mix64(0xface3a5cULL, static_cast<uint64_t>(seed)));

  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng = base.fork(static_cast<uint64_t>(attempt));
    int n_cuts = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<Cut> cuts;
    for (int i = 0; i < n_cuts; ++i) cuts.push_back(random_cut(rng, static_cast<double>(s)));

    ShadowMask mask(s, s);
    int64_t covered = 0;
    for (int64_t y = 0; y < s; ++y)
      for (int64_t x = 0; x < s; ++x) {
        if (!p.is_face(y, x)) continue;
        for (const Cut& c : cuts)
          if (c.contains(static_cast<double>(x), static_cast<double>(y))) {
            mask.at(y, x) = 1.0;
            covered++;
            break;
          }
      }
    double frac = static_cast<double>(covered) / static_cast<double>(face_px);
    if (frac >= 0.10 && frac <= 0.60) return mask;
  }

  // Fallback: a half-plane through the face centroid covers about half.
  double cx = 0.0, cy = 0.0;
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x)
      if (p.is_face(y, x)) {
        cx += static_cast<double>(x);
        cy += static_cast<double>(y);
      }
  cx /= static_cast<double>(face_px);
  cy /= static_cast<double>(face_px);
  ShadowMask mask(s, s);
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x)
      if (p.is_face(y, x) && static_cast<double>(x) <= cx) mask.at(y, x) = 1.0;
  return mask;
}

ImageTensor synth_shadow(const ToyPortrait& p, const ShadowMask& mask, double darkness,
                         double softness) {
  if (!(darkness > 0.0 && darkness < 1.0))
    throw std::invalid_argument("synth_shadow: darkness must be in (0,1)");
  Tensor soft = gaussian_blur(mask.data, softness);
  ImageTensor out = p.image;
  for (int64_t y = 0; y < p.size(); ++y)
    for (int64_t x = 0; x < p.size(); ++x) {
      double gain = 1.0 - darkness * soft.at(y, x);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = std::clamp(p.image.at(y, x, c) * gain, 0.0, 1.0);
    }
  return out;
}

LightSpec random_light(Rng& rng) {
  LightSpec l;
  double dx = rng.uniform(-0.9, 0.9), dy = rng.uniform(-0.9, 0.9), dz = rng.uniform(0.15, 1.0);
  double len = std::sqrt(dx * dx + dy * dy + dz * dz);
  l.direction[0] = dx / len;
  l.direction[1] = dy / len;
  l.direction[2] = dz / len;
  l.ambient = rng.uniform(0.15, 0.75);
  l.intensity = rng.uniform(0.35, 1.35);
  return l;
}

std::vector<PairedSample> build_senet_dataset(int64_t n, int64_t seed, int64_t size) {
  return build_senet_dataset_with_records(n, seed, size, nullptr);
}

std::vector<PairedSample> build_senet_dataset_with_records(int64_t n, int64_t seed, int64_t size,
                                                           std::vector<DatasetRecord>* records) {
  if (n < 1) throw std::invalid_argument("build_senet_dataset: n must be >= 1");
  std::vector<PairedSample> out(static_cast<size_t>(n));
  std::vector<DatasetRecord> recs(static_cast<size_t>(n));
  Rng base(static_cast<uint64_t>(seed));

#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < n; ++i) {
    Rng rng = base.fork(static_cast<uint64_t>(i));
    int64_t portrait_seed = static_cast<int64_t>(rng.next_u64() >> 1);
    int64_t mask_seed = static_cast<int64_t>(rng.next_u64() >> 1);
    ToyPortrait p = generate_toy_portrait(portrait_seed, size);
    LightSpec light = random_light(rng);
    ShadowMask mask = random_facial_mask(p, mask_seed);
    ImageTensor relit = synth_relight(p, light);

    PairedSample s;
    s.clean = p.image;
    s.input = composite(p.image, relit, mask);
    s.target_structure = extract_structure_teacher(p.image);
    s.mask = mask;
    out[static_cast<size_t>(i)] = std::move(s);

    DatasetRecord r;
    r.index = i;
    r.portrait_seed = portrait_seed;
    r.mask_seed = mask_seed;
    r.light = light;
    r.mask_coverage =
        static_cast<double>(mask.count()) / static_cast<double>(p.face_pixel_count());
    recs[static_cast<size_t>(i)] = r;
  }

  if (records) *records = std::move(recs);
  return out;
}

void save_dataset(const std::vector<PairedSample>& samples,
                  const std::vector<DatasetRecord>& records, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("dataset: cannot write manifest in " + dir);
  char name[64];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "%05zu", i);
    const std::string stem = (fs::path(dir) / name).string();
    save_image(samples[i].input, stem + "_input.png");
    save_image(samples[i].clean, stem + "_clean.png");
    save_image(samples[i].target_structure, stem + "_structure.png");
    save_mask(samples[i].mask, stem + "_mask.png");

    const DatasetRecord r = i < records.size() ? records[i] : DatasetRecord{};
    json j{{"index", static_cast<int64_t>(i)},
           {"portrait_seed", r.portrait_seed},
           {"mask_seed", r.mask_seed},
           {"light",
            {{"direction", {r.light.direction[0], r.light.direction[1], r.light.direction[2]}},
             {"ambient", r.light.ambient},
             {"intensity", r.light.intensity}}},
           {"mask_coverage", r.mask_coverage}};
    manifest << j.dump() << "\n";
  }
}

std::vector<PairedSample> load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("dataset: missing manifest.jsonl in " + dir);
  std::vector<PairedSample> out;
  std::string line;
  char name[64];
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    int64_t index = j.at("index").get<int64_t>();
    std::snprintf(name, sizeof(name), "%05lld", static_cast<long long>(index));
    const std::string stem = (fs::path(dir) / name).string();
    PairedSample s;
    s.input = load_image(stem + "_input.png");
    s.clean = load_image(stem + "_clean.png");
    s.target_structure = load_image(stem + "_structure.png");
    s.mask = load_mask(stem + "_mask.png");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("dataset: no samples listed in " + dir);
  return out;
}

}  // namespace psr
