#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tempo/image.hpp"

namespace tempo {

// An in-memory sequence of frames with identical shape.
struct VideoSequence {
  std::vector<Frame> frames;
  double frame_rate = 0.0;  // 0 means unknown

  int length() const { return static_cast<int>(frames.size()); }
  int channels() const { return frames.empty() ? 0 : frames[0].channels; }
  int height() const { return frames.empty() ? 0 : frames[0].height; }
  int width() const { return frames.empty() ? 0 : frames[0].width; }

  // Uniform shape + per-frame range checks.
  void validate(const std::string& what) const;
};

// Loads every file in `dir` matching the glob `pattern` (fnmatch syntax),
// in byte-lexicographic filename order.  Zero-padded frame numbers keep that
// order chronological.
VideoSequence load_sequence(const std::string& dir, const std::string& pattern = "*.png");

// Writes frames as <prefix>00000.png, <prefix>00001.png, ... creating `dir`
// if needed.  Returns the written paths.
std::vector<std::string> save_sequence(const VideoSequence& v, const std::string& dir,
                                       const std::string& prefix = "frame_");

VideoSequence resize_sequence(const VideoSequence& v, int out_h, int out_w);

// Rec.601 luma: 0.299 R + 0.587 G + 0.114 B.  1-channel input passes through.
VideoSequence to_grayscale(const VideoSequence& v);

// An input sequence plus per-frame targets.  Fully paired videos drive
// consistency training; sparse pairings (reference frames only) drive
// propagation.
struct PairedVideo {
  VideoSequence inputs;
  std::vector<std::optional<Frame>> targets;  // size == inputs.length()

  std::vector<int> reference_indices() const;
  bool fully_paired() const;
  void validate() const;
};

PairedVideo pair_full(VideoSequence inputs, VideoSequence targets);
PairedVideo pair_references(VideoSequence inputs, std::vector<std::pair<int, Frame>> refs);

// Splits into consecutive clips of `window` frames.  A leftover clip of a
// single frame is merged into the previous clip, so every clip has at least
// two frames (a 31-frame video with window 30 stays one clip).
std::vector<PairedVideo> split_clips(const PairedVideo& pv, int window);

// Class-probability maps for segmentation: `ids` holds integer class ids in
// a single channel; one_hot expands to num_classes channels summing to 1.
Image<double> one_hot(const Image<double>& ids, int num_classes);
Image<double> argmax_ids(const Image<double>& probs);

}  // namespace tempo
