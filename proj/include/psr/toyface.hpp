#pragma once

#include <string>
#include <vector>

#include "psr/image.hpp"
#include "psr/rng.hpp"

namespace psr {

// Region labels used by the procedural portrait generator.
inline constexpr int kRegionBackground = 0;
inline constexpr int kRegionSkin = 1;
inline constexpr int kRegionEyes = 2;
inline constexpr int kRegionBrows = 3;
inline constexpr int kRegionMouth = 4;
inline constexpr int kRegionMole = 5;

struct ToyPortrait {
  ImageTensor image;   // unit-range RGB
  Tensor region_map;   // [H, W] integer labels stored as doubles
  Tensor normal_map;   // [H, W, 3], unit norm per pixel

  int64_t size() const { return image.height(); }
  bool is_face(int64_t y, int64_t x) const { return region_map.at(y, x) != kRegionBackground; }
  int64_t face_pixel_count() const;
  void validate() const;
};

struct LightSpec {
  double direction[3] = {0.0, 0.0, 1.0};  // unit vector
  double ambient = 0.5;                   // [0.1, 0.9]
  double intensity = 1.0;                 // [0.2, 1.5]

  void validate() const;
};

struct PairedSample {
  ImageTensor input;             // shadow-free portrait with synthetic lighting cut
  ImageTensor target_structure;  // teacher structure of the clean portrait
  ImageTensor clean;
  ShadowMask mask;
};

// Deterministic procedural portrait: face ellipse with randomized skin
// tone, eyes/brows/mouth, 0-3 small moles, and an ellipsoid normal map.
ToyPortrait generate_toy_portrait(int64_t seed, int64_t size);

// Ellipse-fit ingestion for real portraits: the inscribed ellipse of the
// given face box becomes the skin region and normal-map support.
ToyPortrait portrait_from_image(const ImageTensor& img, int64_t box_x, int64_t box_y,
                                int64_t box_w, int64_t box_h);

// Lambertian shading: clip(I * (ambient + intensity * max(0, n.d)), 0, 1).
ImageTensor synth_relight(const ToyPortrait& p, const LightSpec& light);

// Union of 1-3 half-plane/ellipse/polygon cuts intersected with the face;
// covers 10-60% of the face pixels.
ShadowMask random_facial_mask(const ToyPortrait& p, int64_t seed);

// image * (1 - darkness * blur(mask, softness)), clipped to unit range.
ImageTensor synth_shadow(const ToyPortrait& p, const ShadowMask& mask, double darkness,
                         double softness);

LightSpec random_light(Rng& rng);

std::vector<PairedSample> build_senet_dataset(int64_t n, int64_t seed, int64_t size = 64);

// Dataset directory layout: <dir>/<index>_{input,clean,structure,mask}.png
// plus manifest.jsonl (one record per sample).
struct DatasetRecord {
  int64_t index = 0;
  int64_t portrait_seed = 0;
  int64_t mask_seed = 0;
  LightSpec light;
  double mask_coverage = 0.0;
};

void save_dataset(const std::vector<PairedSample>& samples,
                  const std::vector<DatasetRecord>& records, const std::string& dir);
std::vector<PairedSample> load_dataset(const std::string& dir);

// Generation with manifest records, as written by the synth-data command.
std::vector<PairedSample> build_senet_dataset_with_records(int64_t n, int64_t seed, int64_t size,
                                                           std::vector<DatasetRecord>* records);

}  // namespace psr
