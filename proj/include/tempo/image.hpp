#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tempo/errors.hpp"

namespace tempo {

// Dense planar image: data laid out channel-major (CHW), so data[c*h*w + y*w + x].
// Doubles carry frames and metrics; floats carry network activations.
template <typename T>
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Image() = default;
  Image(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w),
        data(static_cast<size_t>(c) * h * w, fill) {}

  size_t plane_size() const { return static_cast<size_t>(height) * width; }
  size_t size() const { return data.size(); }

  T* plane(int c) { return data.data() + c * plane_size(); }
  const T* plane(int c) const { return data.data() + c * plane_size(); }

  T& at(int c, int y, int x) { return data[c * plane_size() + static_cast<size_t>(y) * width + x]; }
  const T& at(int c, int y, int x) const {
    return data[c * plane_size() + static_cast<size_t>(y) * width + x];
  }

  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  std::string shape_str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

// A video frame: intensities in [0,1], 1 (gray) or 3 (color) channels.
using Frame = Image<double>;

template <typename To, typename From>
Image<To> image_cast(const Image<From>& src) {
  Image<To> out(src.channels, src.height, src.width);
  for (size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<To>(src.data[i]);
  return out;
}

template <typename T>
bool all_finite(const Image<T>& img) {
  for (const T v : img.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
void clamp01(Image<T>& img) {
  for (T& v : img.data) v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
}

// Boundary check applied wherever frames enter the pipeline (decoding,
// pairing, synthetic generators): finite values in [0,1], supported channel
// counts, minimum spatial size.
inline void validate_frame(const Frame& f, const std::string& what) {
  if (f.channels != 1 && f.channels != 3)
    throw DataError(what + ": expected 1 or 3 channels, got " + std::to_string(f.channels));
  if (f.height < 8 || f.width < 8)
    throw DataError(what + ": frames must be at least 8x8, got " + std::to_string(f.width) + "x" +
                    std::to_string(f.height));
  for (const double v : f.data) {
    if (!std::isfinite(v)) throw DataError(what + ": non-finite pixel value");
    if (v < 0.0 || v > 1.0)
      throw DataError(what + ": pixel value " + std::to_string(v) + " outside [0,1]");
  }
}

}  // namespace tempo
