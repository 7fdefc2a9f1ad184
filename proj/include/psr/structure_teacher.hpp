#pragma once

#include "psr/image.hpp"

namespace psr {

// Deterministic pseudo-ground-truth structure extractor. Difference-of-
// Gaussians line response on luminance, soft-thresholded and inverted so
// that structure reads as dark lines on a light background.
//
// Deliberately NOT illumination-invariant: a hard lighting step produces a
// line response, which is exactly the artifact the structure network is
// trained to suppress.
ImageTensor extract_structure_teacher(const ImageTensor& img);

}  // namespace psr
