#include "support/fixtures.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>

#include "tempo/rng.hpp"

namespace fs = std::filesystem;

namespace fixtures {

namespace {
std::atomic<int> g_dir_counter{0};

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }
}  // namespace

TempDir::TempDir(const std::string& tag) {
  path = fs::temp_directory_path() /
         ("tempo_" + tag + "_" + std::to_string(getpid()) + "_" +
          std::to_string(g_dir_counter.fetch_add(1)));
  fs::create_directories(path);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path, ec);  // best effort
}

tempo::VideoSequence make_pattern_video(int h, int w, int t, double vx, double vy,
                                        double pixel_noise, uint64_t seed) {
  tempo::Rng rng(seed);
  const double kTau = 6.283185307179586;
  tempo::VideoSequence v;
  v.frames.reserve(t);
  for (int i = 0; i < t; ++i) {
    tempo::Frame f(3, h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // sample the pattern at the un-translated coordinate
        const double px = x - vx * i;
        const double py = y - vy * i;
        const double a = std::sin(kTau * px / w) * std::cos(kTau * py / h);
        const double b = std::sin(kTau * (px + py) / (w + h));
        const double c = std::cos(kTau * 2.0 * px / w) * std::sin(kTau * py / h);
        f.at(0, y, x) = 0.5 + 0.30 * a;
        f.at(1, y, x) = 0.5 + 0.25 * b + 0.10 * a;
        f.at(2, y, x) = 0.5 + 0.30 * c;
      }
    }
    if (pixel_noise > 0.0)
      for (auto& val : f.data) val += rng.uniform(-pixel_noise, pixel_noise);
    for (auto& val : f.data) val = clamp01(val);
    v.frames.push_back(std::move(f));
  }
  return v;
}

tempo::VideoSequence apply_flicker(const tempo::VideoSequence& clean, double jitter,
                                   uint64_t seed) {
  tempo::Rng rng(seed);
  tempo::VideoSequence out;
  out.frame_rate = clean.frame_rate;
  out.frames.reserve(clean.frames.size());
  for (const auto& f : clean.frames) {
    const double gain = 1.0 + jitter * rng.uniform(-1.0, 1.0);
    const double offset = 0.5 * jitter * rng.uniform(-1.0, 1.0);
    tempo::Frame g = f;
    for (auto& v : g.data) v = clamp01(gain * v + offset);
    out.frames.push_back(std::move(g));
  }
  return out;
}

MovingSquareScene make_moving_square(int h, int w, int t, double speed, uint64_t seed,
                                     double hue_drift) {
  tempo::Rng rng(seed);
  const double kTau = 6.283185307179586;
  const int side = std::max(4, h / 3);
  const double y0 = (h - side) / 2.0;

  MovingSquareScene scene;
  for (int i = 0; i < t; ++i) {
    const double x0 = 2.0 + speed * i;
    const double phase = 0.15 * i / std::max(1, t - 1);  // background drift
    const double th = kTau * hue_drift * i / std::max(1, t - 1);
    const double ct = std::cos(th), st = std::sin(th);
    tempo::Frame f(3, h, w);
    tempo::Frame m(1, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool fg = x >= x0 && x < x0 + side && y >= y0 && y < y0 + side;
        if (fg) {
          const double tex = 0.5 + 0.2 * std::sin(kTau * (x + 2.0 * y) / side);
          // rotate (R, G) about their midpoint by th: a red square turns
          // yellow, then green, in evenly spaced steps
          const double r0 = 0.85 * tex + 0.15, g0 = 0.3 * tex;
          const double mid = 0.5 * (r0 + g0), dev = 0.5 * (r0 - g0);
          f.at(0, y, x) = clamp01(mid + dev * (ct + st));
          f.at(1, y, x) = clamp01(mid + dev * (st - ct));
          f.at(2, y, x) = clamp01(0.2 + phase);
          m.at(0, y, x) = 1.0;
        } else {
          const double g = 0.35 + 0.25 * std::sin(kTau * (x * 1.0 / w + phase)) *
                                      std::cos(kTau * y * 1.0 / h);
          f.at(0, y, x) = clamp01(0.25 + 0.3 * phase + 0.1 * g);
          f.at(1, y, x) = clamp01(0.45 + g * 0.3);
          f.at(2, y, x) = clamp01(0.75 - 0.3 * phase - 0.1 * g);
        }
      }
    for (auto& val : f.data) val = clamp01(val + rng.uniform(-0.01, 0.01));
    scene.video.frames.push_back(std::move(f));
    scene.masks.push_back(std::move(m));
  }
  return scene;
}

tempo::VideoSequence make_drifting_video(int h, int w, int t, double drift, uint64_t seed) {
  tempo::VideoSequence base = make_pattern_video(h, w, t, 0.0, 0.0, 0.0, seed);
  for (int i = 0; i < t; ++i) {
    const double a = drift * i / std::max(1, t - 1);  // rotation angle in the R/B plane
    const double ca = std::cos(a), sa = std::sin(a);
    tempo::Frame& f = base.frames[i];
    for (size_t p = 0; p < f.plane_size(); ++p) {
      const double r = f.plane(0)[p] - 0.5;
      const double b = f.plane(2)[p] - 0.5;
      f.plane(0)[p] = clamp01(0.5 + ca * r - sa * b);
      f.plane(2)[p] = clamp01(0.5 + sa * r + ca * b);
    }
  }
  return base;
}

double mean_abs_video_diff(const tempo::VideoSequence& a, const tempo::VideoSequence& b) {
  double total = 0.0;
  size_t n = 0;
  for (int i = 0; i < a.length(); ++i) {
    for (size_t j = 0; j < a.frames[i].data.size(); ++j)
      total += std::abs(a.frames[i].data[j] - b.frames[i].data[j]);
    n += a.frames[i].data.size();
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

}  // namespace fixtures
