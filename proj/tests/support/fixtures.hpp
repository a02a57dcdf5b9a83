#pragma once

#include <filesystem>
#include <string>

#include "tempo/video.hpp"

namespace fixtures {

// Unique directory under the system temp root, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

// A smooth, periodic 3-channel pattern translated by (vx, vy) pixels per
// frame, so the true inter-frame flow is a constant translation.  Optional
// per-pixel uniform noise decorrelates the frames.
tempo::VideoSequence make_pattern_video(int h, int w, int t, double vx, double vy,
                                        double pixel_noise, uint64_t seed);

// Applies an unstable per-frame global gain/offset to a clean sequence:
// the hallmark flicker left by frame-by-frame processing.  Jitter is the
// amplitude of the gain deviation.
tempo::VideoSequence apply_flicker(const tempo::VideoSequence& clean, double jitter,
                                   uint64_t seed);

// Per-frame mean over all pixels/channels of |a - b|.
double mean_abs_video_diff(const tempo::VideoSequence& a, const tempo::VideoSequence& b);

// Segmentation scene: a textured square gliding over a slowly drifting
// background, with the matching per-frame binary masks (1-channel, 1 =
// square).  `hue_drift` rotates the square's red/green colors by that
// fraction of a full turn across the clip: late frames stop resembling the
// first one while consecutive frames stay close, which is the regime where
// adapting along the way beats fit-once-and-infer.  0 keeps the colors
// fixed.
struct MovingSquareScene {
  tempo::VideoSequence video;
  std::vector<tempo::Frame> masks;
};
MovingSquareScene make_moving_square(int h, int w, int t, double speed, uint64_t seed,
                                     double hue_drift = 0.0);

// Static composition whose colors rotate further from the original as time
// passes: frames near a reference stay predictable from it, distant frames
// do not.
tempo::VideoSequence make_drifting_video(int h, int w, int t, double drift, uint64_t seed);

}  // namespace fixtures
