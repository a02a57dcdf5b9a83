#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tempo/image.hpp"
#include "tempo/video.hpp"

namespace tempo {

// A flow field is a 2-channel image (dx plane, then dy plane) defined on the
// grid of the frame being produced: warping frame s onto frame t's grid
// samples s at (x + dx, y + dy).  Same layout the low-level warp kernel uses.
using FlowField = Image<double>;
using OcclusionMask = Image<double>;  // single channel, values in {0,1}

// Sanity bounds for flows crossing the file boundary: finite, 2 channels,
// |dx| < width, |dy| < height.
void validate_flow(const FlowField& f, const std::string& what);

// Supplies the displacement field that pulls frame `from` onto frame `to`'s
// grid.  Implementations may use the frame contents (estimators) or only the
// indices (synthetic/file-backed sources).
class FlowSource {
 public:
  virtual ~FlowSource() = default;
  virtual FlowField flow_between(const VideoSequence& v, int to, int from) const = 0;
};

// Static-scene assumption: zero displacement everywhere.
class ZeroFlow final : public FlowSource {
 public:
  FlowField flow_between(const VideoSequence& v, int to, int from) const override;
};

// Content translating rigidly by (vx, vy) pixels per frame step, so the
// field pulling frame `from` onto frame `to` is the constant
// (vx, vy) * (from - to).
class TranslationFlow final : public FlowSource {
 public:
  TranslationFlow(double vx, double vy) : vx_(vx), vy_(vy) {}
  FlowField flow_between(const VideoSequence& v, int to, int from) const override;

 private:
  double vx_, vy_;
};

// Precomputed flows named by a JSON manifest:
//   {"flows": [{"to": 1, "from": 0, "path": "flow_00001_00000.flw"}, ...]}
// Frame indices are 0-based; paths are resolved relative to the manifest's
// directory.  Requesting a pair the manifest lacks is a data error.
class FileFlow final : public FlowSource {
 public:
  explicit FileFlow(const std::string& manifest_path);
  FlowField flow_between(const VideoSequence& v, int to, int from) const override;

 private:
  std::map<std::pair<int, int>, std::string> paths_;
};

// Adapter for an external estimator.  For each pair the two frames are
// written as PNGs and `command <from.png> <to.png> <out.flw>` runs through
// the shell; the command must write a flow file (see write_flow_file).
class ExternalCommandFlow final : public FlowSource {
 public:
  explicit ExternalCommandFlow(std::string command) : command_(std::move(command)) {}
  FlowField flow_between(const VideoSequence& v, int to, int from) const override;

 private:
  std::string command_;
};

// Flow file format: magic "FLW1", uint32 height, uint32 width
// (little-endian), then the dx plane and the dy plane as float32.
void write_flow_file(const std::string& path, const FlowField& flow);
FlowField read_flow_file(const std::string& path);

// Bilinear backward warp of src through the field, edge-clamped; callers
// mask out-of-bounds regions via the occlusion mask.
Frame backward_warp(const Frame& src, const FlowField& flow);

// Forward-backward consistency: a pixel is valid when the round trip
// |f_fwd + warp(f_bwd)|^2 <= alpha1 * (|f_fwd|^2 + |warp(f_bwd)|^2) + alpha2.
OcclusionMask occlusion_mask(const FlowField& f_fwd, const FlowField& f_bwd,
                             double alpha1 = 0.01, double alpha2 = 0.5);

// Masked mean over valid pixels of the L1 difference between o_t and o_s
// warped onto its grid.  Channels are summed per pixel by default;
// channel_mean averages them instead.  An all-zero mask is an error.
double e_pair(const Frame& o_t, const Frame& o_s, const FlowField& flow_t_to_s,
              const OcclusionMask& mask, bool channel_mean = false);

struct WarpErrorOptions {
  double alpha1 = 0.01;
  double alpha2 = 0.5;
  bool channel_mean = false;
};

struct WarpError {
  double value = 0.0;
  std::vector<double> short_term;  // e_pair(O_t, O_{t-1}), t = 1..T-1
  std::vector<double> long_term;   // e_pair(O_t, O_0),     t = 1..T-1
};

// Temporal consistency: mean over t >= 1 of
// e_pair(O_t, O_0) + e_pair(O_t, O_{t-1}).  Flows and occlusion masks are
// computed on the companion input sequence, so competing outputs are
// compared under identical warps.
WarpError e_warp(const VideoSequence& outputs, const VideoSequence& inputs,
                 const FlowSource& flows, const WarpErrorOptions& opts = {});

// PSNR with peak 1.0, capped at 100 dB for near-identical frames.
double psnr(const Frame& a, const Frame& b);

// Fidelity to the processed frames: mean PSNR over every frame but the
// first.
double f_data(const VideoSequence& processed, const VideoSequence& outputs);

// Per-frame mean over all pixels and channels; flat traces indicate stable
// global tone (flicker shows up as jitter).
std::vector<double> mean_intensity_trace(const VideoSequence& v);

struct MetricReport {
  double e_warp = 0.0;
  double f_data = 0.0;  // dB
  std::vector<double> short_term;      // length T-1
  std::vector<double> long_term;       // length T-1
  std::vector<double> mean_intensity;  // length T
};

MetricReport evaluate_video(const VideoSequence& outputs, const VideoSequence& inputs,
                            const VideoSequence& processed, const FlowSource& flows,
                            const WarpErrorOptions& opts = {});

// CSV: one row per frame (pair metrics empty on frame 0); JSON: summary plus
// the same series.  Both use fixed formatting so identical runs are
// byte-comparable.
void write_metric_csv(const MetricReport& r, const std::string& path);
void write_metric_json(const MetricReport& r, const std::string& path);

// The one float format every CSV writer uses ("%.9g").
std::string format_g(double v);

}  // namespace tempo
