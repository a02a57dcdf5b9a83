#pragma once

#include <string>

#include "tempo/image.hpp"

namespace tempo {

// Decodes a PNG (8- or 16-bit) or JPEG file into a Frame in [0,1].
// Grayscale sources give 1 channel, color sources 3; alpha is dropped and
// palettes are expanded.  The format is sniffed from the file's magic bytes.
Frame load_image(const std::string& path);

// Writes an 8-bit PNG (1 channel -> grayscale, 3 -> RGB).  Values are
// clamped to [0,1] and quantized with rounding.
void save_png(const Frame& f, const std::string& path);

// Reads an 8-bit grayscale PNG of integer class ids, without intensity
// scaling: pixel value 3 means class 3.
Image<double> load_class_mask(const std::string& path);

}  // namespace tempo
