#include "tempo/video.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tempo/errors.hpp"
#include "tempo/image_io.hpp"
#include "tempo/kernels.hpp"

namespace fs = std::filesystem;

namespace tempo {

void VideoSequence::validate(const std::string& what) const {
  if (frames.empty()) throw DataError(what + ": empty sequence");
  for (size_t i = 0; i < frames.size(); ++i) {
    validate_frame(frames[i], what + " frame " + std::to_string(i));
    if (!frames[i].same_shape(frames[0]))
      throw DataError(what + ": frame " + std::to_string(i) + " is " + frames[i].shape_str() +
                      ", expected " + frames[0].shape_str());
  }
}

VideoSequence load_sequence(const std::string& dir, const std::string& pattern) {
  if (!fs::is_directory(dir)) throw DataError("no such directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (fnmatch(pattern.c_str(), name.c_str(), 0) == 0) names.push_back(name);
  }
  if (names.empty()) throw DataError("no frames matching '" + pattern + "' in " + dir);
  std::sort(names.begin(), names.end());

  VideoSequence v;
  v.frames.reserve(names.size());
  for (const auto& name : names) {
    const std::string path = (fs::path(dir) / name).string();
    Frame f = load_image(path);
    if (!v.frames.empty() && !f.same_shape(v.frames[0]))
      throw DataError(path + ": frame is " + f.shape_str() + ", expected " +
                      v.frames[0].shape_str() + " (from " + names[0] + ")");
    v.frames.push_back(std::move(f));
  }
  return v;
}

std::vector<std::string> save_sequence(const VideoSequence& v, const std::string& dir,
                                       const std::string& prefix) {
  fs::create_directories(dir);
  std::vector<std::string> paths;
  paths.reserve(v.frames.size());
  char name[64];
  for (size_t i = 0; i < v.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "%s%05zu.png", prefix.c_str(), i);
    std::string path = (fs::path(dir) / name).string();
    save_png(v.frames[i], path);
    paths.push_back(std::move(path));
  }
  return paths;
}

VideoSequence resize_sequence(const VideoSequence& v, int out_h, int out_w) {
  if (out_h < 8 || out_w < 8)
    throw ConfigError("resize_sequence: target size must be at least 8x8");
  VideoSequence out;
  out.frame_rate = v.frame_rate;
  out.frames.reserve(v.frames.size());
  for (const auto& f : v.frames) {
    Frame r(f.channels, out_h, out_w);
    kernels::resize_bilinear(f.data.data(), f.channels, f.height, f.width, out_h, out_w,
                             r.data.data());
    out.frames.push_back(std::move(r));
  }
  return out;
}

VideoSequence to_grayscale(const VideoSequence& v) {
  VideoSequence out;
  out.frame_rate = v.frame_rate;
  out.frames.reserve(v.frames.size());
  for (const auto& f : v.frames) {
    if (f.channels == 1) {
      out.frames.push_back(f);
      continue;
    }
    Frame g(1, f.height, f.width);
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x)
        g.at(0, y, x) = 0.299 * f.at(0, y, x) + 0.587 * f.at(1, y, x) + 0.114 * f.at(2, y, x);
    out.frames.push_back(std::move(g));
  }
  return out;
}

std::vector<int> PairedVideo::reference_indices() const {
  std::vector<int> idx;
  for (size_t i = 0; i < targets.size(); ++i)
    if (targets[i].has_value()) idx.push_back(static_cast<int>(i));
  return idx;
}

bool PairedVideo::fully_paired() const {
  return !targets.empty() &&
         std::all_of(targets.begin(), targets.end(), [](const auto& t) { return t.has_value(); });
}

void PairedVideo::validate() const {
  inputs.validate("input sequence");
  if (static_cast<int>(targets.size()) != inputs.length())
    throw DataError("paired video: " + std::to_string(targets.size()) + " target slots for " +
                    std::to_string(inputs.length()) + " frames");
  int ch = -1, refs = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (!targets[i].has_value()) continue;
    ++refs;
    const Frame& t = *targets[i];
    // Targets may be label maps with any channel count, so they get a softer
    // check than validate_frame applies to the inputs.
    const std::string what = "target frame " + std::to_string(i);
    if (t.channels < 1) throw DataError(what + ": no channels");
    for (const double v : t.data) {
      if (!std::isfinite(v)) throw DataError(what + ": non-finite pixel value");
      if (v < 0.0 || v > 1.0)
        throw DataError(what + ": pixel value " + std::to_string(v) + " outside [0,1]");
    }
    if (t.height != inputs.height() || t.width != inputs.width())
      throw DataError("target frame " + std::to_string(i) + " is " + t.shape_str() +
                      ", input frames are " + inputs.frames[0].shape_str());
    if (ch < 0) ch = t.channels;
    if (t.channels != ch)
      throw DataError("target frame " + std::to_string(i) + " has " +
                      std::to_string(t.channels) + " channels, earlier targets have " +
                      std::to_string(ch));
  }
  if (refs == 0) throw DataError("paired video has no target frames");
}

PairedVideo pair_full(VideoSequence inputs, VideoSequence targets) {
  if (inputs.length() != targets.length())
    throw DataError("cannot pair " + std::to_string(inputs.length()) + " input frames with " +
                    std::to_string(targets.length()) + " target frames");
  PairedVideo pv;
  pv.inputs = std::move(inputs);
  pv.targets.reserve(targets.frames.size());
  for (auto& f : targets.frames) pv.targets.emplace_back(std::move(f));
  pv.validate();
  return pv;
}

PairedVideo pair_references(VideoSequence inputs, std::vector<std::pair<int, Frame>> refs) {
  PairedVideo pv;
  pv.targets.assign(inputs.frames.size(), std::nullopt);
  pv.inputs = std::move(inputs);
  for (auto& [idx, frame] : refs) {
    if (idx < 0 || idx >= static_cast<int>(pv.targets.size()))
      throw DataError("reference index " + std::to_string(idx) + " out of range for " +
                      std::to_string(pv.targets.size()) + " frames");
    if (pv.targets[idx].has_value())
      throw DataError("duplicate reference index " + std::to_string(idx));
    pv.targets[idx] = std::move(frame);
  }
  pv.validate();
  return pv;
}

std::vector<PairedVideo> split_clips(const PairedVideo& pv, int window) {
  // window 1 could never satisfy the two-frame minimum below
  if (window < 2) throw ConfigError("clip window must be at least 2, got " + std::to_string(window));
  const int t = pv.inputs.length();
  std::vector<std::pair<int, int>> spans;  // [begin, end)
  for (int begin = 0; begin < t; begin += window) spans.emplace_back(begin, std::min(begin + window, t));
  // A trailing single-frame clip cannot be trained or scored; fold it into
  // the previous clip.
  if (spans.size() > 1 && spans.back().second - spans.back().first < 2) {
    spans[spans.size() - 2].second = spans.back().second;
    spans.pop_back();
  }
  std::vector<PairedVideo> clips;
  clips.reserve(spans.size());
  for (const auto& [begin, end] : spans) {
    PairedVideo clip;
    clip.inputs.frame_rate = pv.inputs.frame_rate;
    clip.inputs.frames.assign(pv.inputs.frames.begin() + begin, pv.inputs.frames.begin() + end);
    clip.targets.assign(pv.targets.begin() + begin, pv.targets.begin() + end);
    clips.push_back(std::move(clip));
  }
  return clips;
}

Image<double> one_hot(const Image<double>& ids, int num_classes) {
  if (ids.channels != 1) throw DataError("one_hot: ids must be single-channel");
  if (num_classes < 2) throw ConfigError("one_hot: need at least 2 classes");
  Image<double> out(num_classes, ids.height, ids.width, 0.0);
  for (int y = 0; y < ids.height; ++y)
    for (int x = 0; x < ids.width; ++x) {
      const double v = ids.at(0, y, x);
      const int id = static_cast<int>(v);
      if (v != std::floor(v) || id < 0 || id >= num_classes)
        throw DataError("one_hot: class id " + std::to_string(v) + " at (" + std::to_string(x) +
                        "," + std::to_string(y) + ") outside 0.." +
                        std::to_string(num_classes - 1));
      out.at(id, y, x) = 1.0;
    }
  return out;
}

Image<double> argmax_ids(const Image<double>& probs) {
  Image<double> out(1, probs.height, probs.width);
  for (int y = 0; y < probs.height; ++y)
    for (int x = 0; x < probs.width; ++x) {
      int best = 0;
      for (int c = 1; c < probs.channels; ++c)
        if (probs.at(c, y, x) > probs.at(best, y, x)) best = c;
      out.at(0, y, x) = best;
    }
  return out;
}

}  // namespace tempo
