#include "tempo/toy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tempo/errors.hpp"
#include "tempo/image_io.hpp"
#include "tempo/losses.hpp"
#include "tempo/metrics.hpp"
#include "tempo/net.hpp"
#include "tempo/plot.hpp"
#include "tempo/rng.hpp"
#include "tempo/trainer.hpp"

namespace tempo {

void ToyConfig::validate() const {
  if (n_frames < 2) throw ConfigError("toy runs need at least 2 frames");
  if (input_dim < 1 || out_dim < 1) throw ConfigError("toy dimensions must be >= 1");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
    throw ConfigError("noise_scale must be a non-negative finite number");
  if (!(cluster_separation > 0.0) || !std::isfinite(cluster_separation))
    throw ConfigError("cluster_separation must be a positive finite number");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be a positive finite number");
  if (warmup_iterations < 0) throw ConfigError("warmup_iterations must be >= 0");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be > 0");
  for (size_t i = 0; i < snapshot_iters.size(); ++i) {
    if (snapshot_iters[i] < 1 || snapshot_iters[i] > iterations)
      throw ConfigError("snapshot iteration " + std::to_string(snapshot_iters[i]) +
                        " outside [1, " + std::to_string(iterations) + "]");
    if (i > 0 && snapshot_iters[i] <= snapshot_iters[i - 1])
      throw ConfigError("snapshot_iters must be strictly increasing");
  }
}

ToyData make_toy_data(const ToyConfig& cfg) {
  cfg.validate();
  ToyData d;
  Rng rng(cfg.seed);

  // Nearby inputs stand in for consecutive frames of one scene.
  for (int i = 0; i < cfg.n_frames; ++i) {
    ToyPoint p(cfg.input_dim);
    for (double& v : p) v = rng.uniform(-0.1, 0.1);
    d.inputs.push_back(std::move(p));
  }

  ToyPoint c0(cfg.out_dim, 1.0);
  if (cfg.bimodal) {
    ToyPoint c1 = c0;
    c0[0] -= cfg.cluster_separation / 2.0;
    c1[0] += cfg.cluster_separation / 2.0;
    d.centers = {std::move(c0), std::move(c1)};
  } else {
    d.centers = {std::move(c0)};
  }

  for (int i = 0; i < cfg.n_frames; ++i) {
    const ToyPoint& c = d.centers[cfg.bimodal ? i % 2 : 0];
    ToyPoint t(cfg.out_dim);
    for (int k = 0; k < cfg.out_dim; ++k) t[k] = c[k] + cfg.noise_scale * rng.normal();
    d.targets.push_back(std::move(t));
  }
  return d;
}

double point_distance(const ToyPoint& a, const ToyPoint& b) {
  if (a.size() != b.size()) throw ConfigError("point dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double point_spread(const std::vector<ToyPoint>& pts) {
  if (pts.size() < 2) return 0.0;
  double sum = 0.0;
  int n = 0;
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) {
      sum += point_distance(pts[i], pts[j]);
      ++n;
    }
  return sum / n;
}

namespace {

// The stand-in network: two LeakyReLU hidden layers, linear output wide
// enough for every head.
struct Mlp {
  int in = 0, hid = 0, out = 0;
  std::vector<double> w1, b1, w2, b2, w3, b3;  // row-major [rows][cols]

  static Mlp init(int in, int hid, int out, uint64_t seed) {
    Mlp m;
    m.in = in, m.hid = hid, m.out = out;
    Rng rng(seed);
    auto fill = [&](std::vector<double>& w, int rows, int cols) {
      const double s = 1.0 / std::sqrt(static_cast<double>(cols));
      w.resize(static_cast<size_t>(rows) * cols);
      for (double& v : w) v = rng.uniform(-s, s);
    };
    fill(m.w1, hid, in);
    fill(m.w2, hid, hid);
    fill(m.w3, out, hid);
    m.b1.assign(hid, 0.0);
    m.b2.assign(hid, 0.0);
    m.b3.assign(out, 0.0);
    return m;
  }

  struct Tape {
    std::vector<double> x, z1, a1, z2, a2;
  };

  static void affine(const std::vector<double>& w, const std::vector<double>& b, int rows,
                     int cols, const std::vector<double>& x, std::vector<double>& y) {
    y.assign(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
      double s = b[r];
      const double* row = w.data() + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) s += row[c] * x[c];
      y[r] = s;
    }
  }

  static double lrelu(double v) { return v > 0.0 ? v : kLeakySlope * v; }
  static double lrelu_grad(double v) { return v > 0.0 ? 1.0 : kLeakySlope; }

  std::vector<double> forward(const ToyPoint& x, Tape* tape) const {
    Tape local;
    Tape& t = tape ? *tape : local;
    t.x = x;
    affine(w1, b1, hid, in, t.x, t.z1);
    t.a1.resize(hid);
    for (int i = 0; i < hid; ++i) t.a1[i] = lrelu(t.z1[i]);
    affine(w2, b2, hid, hid, t.a1, t.z2);
    t.a2.resize(hid);
    for (int i = 0; i < hid; ++i) t.a2[i] = lrelu(t.z2[i]);
    std::vector<double> y;
    affine(w3, b3, out, hid, t.a2, y);
    return y;
  }

  struct Grads {
    std::vector<double> w1, b1, w2, b2, w3, b3;
  };

  void backward(const Tape& t, const std::vector<double>& dy, Grads* g) const {
    g->w3.assign(w3.size(), 0.0);
    g->b3 = dy;
    std::vector<double> da2(hid, 0.0);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < hid; ++c) {
        g->w3[static_cast<size_t>(r) * hid + c] = dy[r] * t.a2[c];
        da2[c] += dy[r] * w3[static_cast<size_t>(r) * hid + c];
      }

    std::vector<double> dz2(hid);
    for (int i = 0; i < hid; ++i) dz2[i] = da2[i] * lrelu_grad(t.z2[i]);
    g->w2.assign(w2.size(), 0.0);
    g->b2 = dz2;
    std::vector<double> da1(hid, 0.0);
    for (int r = 0; r < hid; ++r)
      for (int c = 0; c < hid; ++c) {
        g->w2[static_cast<size_t>(r) * hid + c] = dz2[r] * t.a1[c];
        da1[c] += dz2[r] * w2[static_cast<size_t>(r) * hid + c];
      }

    std::vector<double> dz1(hid);
    for (int i = 0; i < hid; ++i) dz1[i] = da1[i] * lrelu_grad(t.z1[i]);
    g->w1.assign(w1.size(), 0.0);
    g->b1 = dz1;
    for (int r = 0; r < hid; ++r)
      for (int c = 0; c < in; ++c) g->w1[static_cast<size_t>(r) * in + c] = dz1[r] * t.x[c];
  }
};

Image<double> as_image(const double* p, int dim) {
  Image<double> im(dim, 1, 1);
  std::copy(p, p + dim, im.data.begin());
  return im;
}

ToyPoint as_point(const Image<double>& im) { return ToyPoint(im.data.begin(), im.data.end()); }

}  // namespace

ToyTrajectory run_toy(const ToyConfig& cfg, bool irt) {
  cfg.validate();
  ToyTrajectory traj;
  traj.data = make_toy_data(cfg);
  const int dim = cfg.out_dim;
  const int heads = irt ? 2 : 1;

  Mlp net = Mlp::init(cfg.input_dim, cfg.hidden_dim, dim * heads, cfg.seed);
  Mlp::Grads g;
  Adam<double> adam(cfg.learning_rate);
  // Sampling stream decoupled from the init stream so changing the net
  // width doesn't reshuffle the visit order.
  Rng rng = Rng(cfg.seed).fork(1);

  auto step = [&](int frame, bool warmup) {
    Mlp::Tape tape;
    std::vector<double> y = net.forward(traj.data.inputs[frame], &tape);
    Image<double> target = as_image(traj.data.targets[frame].data(), dim);
    std::vector<double> dy(y.size(), 0.0);

    if (!irt) {
      LossResult<double> lr =
          data_loss(as_image(y.data(), dim), target, LossKind::kL1, nullptr, nullptr, 1.0);
      std::copy(lr.grad.data.begin(), lr.grad.data.end(), dy.begin());
    } else {
      Image<double> main = as_image(y.data(), dim);
      Image<double> minor = as_image(y.data() + dim, dim);
      if (warmup) {
        LossResult<double> lm = data_loss(main, target, LossKind::kL1, nullptr, nullptr, 1.0);
        LossResult<double> ln = data_loss(minor, target, LossKind::kL1, nullptr, nullptr, 1.0);
        std::copy(lm.grad.data.begin(), lm.grad.data.end(), dy.begin());
        std::copy(ln.grad.data.begin(), ln.grad.data.end(), dy.begin() + dim);
      } else {
        Image<double> conf = compute_confidence(main, minor, target, cfg.delta);
        IrtResult<double> ir =
            irt_loss(main, minor, target, conf, LossKind::kL1, nullptr, 1.0);
        std::copy(ir.grad_main.data.begin(), ir.grad_main.data.end(), dy.begin());
        std::copy(ir.grad_minor.data.begin(), ir.grad_minor.data.end(), dy.begin() + dim);
      }
    }

    net.backward(tape, dy, &g);
    adam.update(0, net.w1, g.w1);
    adam.update(1, net.b1, g.b1);
    adam.update(2, net.w2, g.w2);
    adam.update(3, net.b2, g.b2);
    adam.update(4, net.w3, g.w3);
    adam.update(5, net.b3, g.b3);
  };

  if (irt)
    for (int i = 0; i < cfg.warmup_iterations; ++i) step(0, true);

  size_t next_snap = 0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    step(rng.uniform_int(cfg.n_frames), false);
    if (next_snap < cfg.snapshot_iters.size() && cfg.snapshot_iters[next_snap] == it) {
      ToySnapshot snap;
      snap.iteration = it;
      for (int f = 0; f < cfg.n_frames; ++f) {
        std::vector<double> y = net.forward(traj.data.inputs[f], nullptr);
        snap.main.push_back(as_point(as_image(y.data(), dim)));
        if (irt) snap.minor.push_back(as_point(as_image(y.data() + dim, dim)));
      }
      traj.snapshots.push_back(std::move(snap));
      ++next_snap;
    }
  }
  return traj;
}

void write_toy_csv(const ToyData& data, const ToySnapshot& snap, const std::string& path) {
  if (snap.main.size() != data.targets.size())
    throw ConfigError("snapshot/data frame count mismatch");
  if (!snap.main.empty() && snap.main[0].size() != 2)
    throw ConfigError("toy CSV output is 2-D");

  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "iteration,frame_index,head,out_x,out_y,target_x,target_y\n";
  for (size_t f = 0; f < snap.main.size(); ++f) {
    const ToyPoint& t = data.targets[f];
    out << snap.iteration << "," << f << ",main," << format_g(snap.main[f][0]) << ","
        << format_g(snap.main[f][1]) << "," << format_g(t[0]) << "," << format_g(t[1]) << "\n";
    if (!snap.minor.empty())
      out << snap.iteration << "," << f << ",minor," << format_g(snap.minor[f][0]) << ","
          << format_g(snap.minor[f][1]) << "," << format_g(t[0]) << "," << format_g(t[1])
          << "\n";
  }
  if (!out) throw DataError("failed writing " + path);
}

Frame render_scatter(const std::vector<ScatterSeries>& series, int h, int w) {
  if (h < 16 || w < 16) throw ConfigError("scatter canvas must be at least 16x16");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const ScatterSeries& s : series)
    for (const auto& p : s.points) {
      xmin = std::min(xmin, p[0]), xmax = std::max(xmax, p[0]);
      ymin = std::min(ymin, p[1]), ymax = std::max(ymax, p[1]);
    }
  if (xmin > xmax) xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  const double mx = 0.1 * (xmax - xmin), my = 0.1 * (ymax - ymin);
  xmin -= mx, xmax += mx, ymin -= my, ymax += my;

  Frame canvas(3, h, w, 1.0);
  for (const ScatterSeries& s : series)
    for (const auto& p : s.points) {
      const double px = (p[0] - xmin) / (xmax - xmin) * (w - 1);
      const double py = (h - 1) - (p[1] - ymin) / (ymax - ymin) * (h - 1);
      const int r = static_cast<int>(std::ceil(s.radius));
      for (int y = std::max(0, static_cast<int>(py) - r);
           y <= std::min(h - 1, static_cast<int>(py) + r); ++y)
        for (int x = std::max(0, static_cast<int>(px) - r);
             x <= std::min(w - 1, static_cast<int>(px) + r); ++x) {
          const double d2 = (y - py) * (y - py) + (x - px) * (x - px);
          if (d2 > s.radius * s.radius) continue;
          for (int c = 0; c < 3; ++c) canvas.at(c, y, x) = s.rgb[c];
        }
    }
  return canvas;
}

void write_toy_scatter(const ToyData& data, const ToySnapshot& snap, const std::string& path) {
  auto to2d = [](const std::vector<ToyPoint>& pts) {
    std::vector<std::array<double, 2>> out;
    for (const ToyPoint& p : pts) {
      if (p.size() != 2) throw ConfigError("toy scatter output is 2-D");
      out.push_back({p[0], p[1]});
    }
    return out;
  };
  std::vector<ScatterSeries> series;
  series.push_back({to2d(data.targets), {0.25, 0.45, 0.9}, 4.0});
  series.push_back({to2d(data.centers), {0.05, 0.05, 0.05}, 6.0});
  if (!snap.minor.empty()) series.push_back({to2d(snap.minor), {0.95, 0.6, 0.15}, 3.0});
  series.push_back({to2d(snap.main), {0.85, 0.1, 0.1}, 3.0});
  save_png(render_scatter(series, 256, 256), path);
}

}  // namespace tempo
