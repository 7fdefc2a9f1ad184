#pragma once

#include "psr/image.hpp"

namespace psr {

struct OtsuResult {
  int threshold = 0;       // smallest k in [0,255] maximizing between-class variance
  bool degenerate = false; // histogram has a single occupied bin
};

// Otsu's method over a 256-bin histogram of a unit-range single-channel
// image. Ties break to the smallest k; a single-class histogram returns
// threshold 0 with the degenerate flag set.
OtsuResult otsu_threshold(const ImageTensor& gray);

// Threshold the per-pixel mean absolute difference between the input and
// the shadow removal result. Degenerate difference images (no change)
// yield the empty mask.
ShadowMask refine_mask(const ImageTensor& input, const ImageTensor& removed);

// refined*removed + (1-refined)*input; keeps non-shadow pixels untouched.
ImageTensor composite_update(const ImageTensor& input, const ImageTensor& removed,
                             const ShadowMask& refined);

}  // namespace psr
