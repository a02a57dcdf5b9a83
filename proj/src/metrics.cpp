#include "tempo/metrics.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include <json.hpp>

#include "tempo/errors.hpp"
#include "tempo/image_io.hpp"
#include "tempo/kernels.hpp"
#include "tempo/rng.hpp"

namespace fs = std::filesystem;

namespace tempo {

void validate_flow(const FlowField& f, const std::string& what) {
  if (f.channels != 2)
    throw DataError(what + ": flow needs 2 channels (dx, dy), got " +
                    std::to_string(f.channels));
  if (!all_finite(f)) throw DataError(what + ": flow has non-finite values");
  const double* dx = f.plane(0);
  const double* dy = f.plane(1);
  for (size_t i = 0; i < f.plane_size(); ++i) {
    if (std::abs(dx[i]) >= f.width || std::abs(dy[i]) >= f.height)
      throw DataError(what + ": displacement exceeds frame bounds");
  }
}

namespace {

void check_pair_index(const VideoSequence& v, int to, int from) {
  if (to < 0 || to >= v.length() || from < 0 || from >= v.length())
    throw DataError("flow pair (" + std::to_string(to) + ", " + std::to_string(from) +
                    ") out of range for " + std::to_string(v.length()) + " frames");
}

}  // namespace

FlowField ZeroFlow::flow_between(const VideoSequence& v, int to, int from) const {
  check_pair_index(v, to, from);
  return FlowField(2, v.height(), v.width());
}

FlowField TranslationFlow::flow_between(const VideoSequence& v, int to, int from) const {
  check_pair_index(v, to, from);
  FlowField f(2, v.height(), v.width());
  const double dx = vx_ * (from - to);
  const double dy = vy_ * (from - to);
  double* px = f.plane(0);
  double* py = f.plane(1);
  for (size_t i = 0; i < f.plane_size(); ++i) {
    px[i] = dx;
    py[i] = dy;
  }
  return f;
}

FileFlow::FileFlow(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open flow manifest " + manifest_path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("flow manifest " + manifest_path + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("flows") || !doc["flows"].is_array())
    throw DataError("flow manifest " + manifest_path + ": expected {\"flows\": [...]}");

  const fs::path base = fs::path(manifest_path).parent_path();
  for (const auto& entry : doc["flows"]) {
    if (!entry.is_object() || !entry.contains("to") || !entry.contains("from") ||
        !entry.contains("path") || !entry["to"].is_number_integer() ||
        !entry["from"].is_number_integer() || !entry["path"].is_string())
      throw DataError("flow manifest " + manifest_path +
                      ": each entry needs integer to/from and a path");
    const int to = entry["to"].get<int>();
    const int from = entry["from"].get<int>();
    if (to < 0 || from < 0)
      throw DataError("flow manifest " + manifest_path + ": negative frame index");
    const auto key = std::make_pair(to, from);
    if (paths_.count(key))
      throw DataError("flow manifest " + manifest_path + ": duplicate pair (" +
                      std::to_string(to) + ", " + std::to_string(from) + ")");
    paths_[key] = (base / entry["path"].get<std::string>()).string();
  }
}

FlowField FileFlow::flow_between(const VideoSequence& v, int to, int from) const {
  check_pair_index(v, to, from);
  auto it = paths_.find(std::make_pair(to, from));
  if (it == paths_.end())
    throw DataError("flow manifest has no entry for pair (" + std::to_string(to) + ", " +
                    std::to_string(from) + ")");
  FlowField f = read_flow_file(it->second);
  if (f.height != v.height() || f.width != v.width())
    throw DataError(it->second + ": flow is " + std::to_string(f.width) + "x" +
                    std::to_string(f.height) + ", video is " + std::to_string(v.width()) + "x" +
                    std::to_string(v.height()));
  return f;
}

FlowField ExternalCommandFlow::flow_between(const VideoSequence& v, int to, int from) const {
  check_pair_index(v, to, from);

  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("tempo_flow_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++));
  fs::create_directories(dir);
  const std::string from_png = (dir / "from.png").string();
  const std::string to_png = (dir / "to.png").string();
  const std::string out_flw = (dir / "out.flw").string();

  try {
    save_png(v.frames[from], from_png);
    save_png(v.frames[to], to_png);
    const std::string cmd =
        command_ + " '" + from_png + "' '" + to_png + "' '" + out_flw + "'";
    if (std::system(cmd.c_str()) != 0)
      throw DataError("flow command failed: " + cmd);
    FlowField f = read_flow_file(out_flw);
    if (f.height != v.height() || f.width != v.width())
      throw DataError("flow command wrote a " + std::to_string(f.width) + "x" +
                      std::to_string(f.height) + " field for a " + std::to_string(v.width()) +
                      "x" + std::to_string(v.height()) + " video");
    fs::remove_all(dir);
    return f;
  } catch (...) {
    fs::remove_all(dir);
    throw;
  }
}

void write_flow_file(const std::string& path, const FlowField& flow) {
  validate_flow(flow, path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write flow file " + path);
  const uint32_t h = static_cast<uint32_t>(flow.height);
  const uint32_t w = static_cast<uint32_t>(flow.width);
  out.write("FLW1", 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  std::vector<float> plane(flow.plane_size());
  for (int c = 0; c < 2; ++c) {
    const double* src = flow.plane(c);
    for (size_t i = 0; i < plane.size(); ++i) plane[i] = static_cast<float>(src[i]);
    out.write(reinterpret_cast<const char*>(plane.data()), plane.size() * sizeof(float));
  }
  if (!out) throw DataError("short write on flow file " + path);
}

FlowField read_flow_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open flow file " + path);
  char magic[4];
  uint32_t h = 0, w = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (!in || std::memcmp(magic, "FLW1", 4) != 0)
    throw DataError(path + " is not a flow file");
  if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20))
    throw DataError(path + ": implausible flow dimensions");

  FlowField f(2, static_cast<int>(h), static_cast<int>(w));
  std::vector<float> plane(f.plane_size());
  for (int c = 0; c < 2; ++c) {
    in.read(reinterpret_cast<char*>(plane.data()), plane.size() * sizeof(float));
    if (!in) throw DataError(path + ": truncated flow file");
    double* dst = f.plane(c);
    for (size_t i = 0; i < plane.size(); ++i) dst[i] = plane[i];
  }
  validate_flow(f, path);
  return f;
}

Frame backward_warp(const Frame& src, const FlowField& flow) {
  if (flow.channels != 2 || flow.height != src.height || flow.width != src.width)
    throw DataError("backward_warp: flow " + flow.shape_str() + " does not match frame " +
                    src.shape_str());
  Frame out(src.channels, src.height, src.width);
  kernels::warp_bilinear(src.data.data(), src.channels, src.height, src.width, flow.data.data(),
                         out.data.data());
  return out;
}

OcclusionMask occlusion_mask(const FlowField& f_fwd, const FlowField& f_bwd, double alpha1,
                             double alpha2) {
  if (!f_fwd.same_shape(f_bwd))
    throw DataError("occlusion_mask: flow shapes differ, " + f_fwd.shape_str() + " vs " +
                    f_bwd.shape_str());
  if (f_fwd.channels != 2) throw DataError("occlusion_mask: flows need 2 channels");

  // Pull the reverse flow onto the forward grid, then test the round trip.
  FlowField wb(2, f_fwd.height, f_fwd.width);
  kernels::warp_bilinear(f_bwd.data.data(), 2, f_fwd.height, f_fwd.width, f_fwd.data.data(),
                         wb.data.data());

  OcclusionMask mask(1, f_fwd.height, f_fwd.width);
  const double* fx = f_fwd.plane(0);
  const double* fy = f_fwd.plane(1);
  const double* bx = wb.plane(0);
  const double* by = wb.plane(1);
  for (size_t i = 0; i < mask.plane_size(); ++i) {
    const double rx = fx[i] + bx[i];
    const double ry = fy[i] + by[i];
    const double lhs = rx * rx + ry * ry;
    const double rhs =
        alpha1 * (fx[i] * fx[i] + fy[i] * fy[i] + bx[i] * bx[i] + by[i] * by[i]) + alpha2;
    mask.data[i] = lhs <= rhs ? 1.0 : 0.0;
  }
  return mask;
}

double e_pair(const Frame& o_t, const Frame& o_s, const FlowField& flow_t_to_s,
              const OcclusionMask& mask, bool channel_mean) {
  if (!o_t.same_shape(o_s))
    throw DataError("e_pair: frame shapes differ, " + o_t.shape_str() + " vs " +
                    o_s.shape_str());
  if (mask.channels != 1 || mask.height != o_t.height || mask.width != o_t.width)
    throw DataError("e_pair: mask " + mask.shape_str() + " does not match frames");

  Frame warped = backward_warp(o_s, flow_t_to_s);
  double wsum = 0.0, acc = 0.0;
  for (size_t i = 0; i < mask.plane_size(); ++i) {
    const double m = mask.data[i];
    if (m == 0.0) continue;
    double d = 0.0;
    for (int c = 0; c < o_t.channels; ++c)
      d += std::abs(o_t.plane(c)[i] - warped.plane(c)[i]);
    if (channel_mean) d /= o_t.channels;
    acc += m * d;
    wsum += m;
  }
  if (wsum == 0.0) throw DataError("e_pair: no valid pixels (mask is all-occluded)");
  return acc / wsum;
}

WarpError e_warp(const VideoSequence& outputs, const VideoSequence& inputs,
                 const FlowSource& flows, const WarpErrorOptions& opts) {
  outputs.validate("outputs");
  inputs.validate("inputs");
  const int T = outputs.length();
  if (T < 2) throw DataError("e_warp needs at least 2 frames");
  if (inputs.length() != T || inputs.height() != outputs.height() ||
      inputs.width() != outputs.width())
    throw DataError("e_warp: input/output sequences do not align");

  WarpError r;
  auto term = [&](int t, int s) {
    FlowField fwd = flows.flow_between(inputs, t, s);
    FlowField bwd = flows.flow_between(inputs, s, t);
    OcclusionMask mask = occlusion_mask(fwd, bwd, opts.alpha1, opts.alpha2);
    return e_pair(outputs.frames[t], outputs.frames[s], fwd, mask, opts.channel_mean);
  };

  double sum = 0.0;
  for (int t = 1; t < T; ++t) {
    const double lt = term(t, 0);
    const double st = term(t, t - 1);
    r.long_term.push_back(lt);
    r.short_term.push_back(st);
    sum += lt + st;
  }
  r.value = sum / (T - 1);
  return r;
}

double psnr(const Frame& a, const Frame& b) {
  if (!a.same_shape(b))
    throw DataError("psnr: shapes differ, " + a.shape_str() + " vs " + b.shape_str());
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= a.data.size();
  if (mse < 1e-10) return 100.0;
  return -10.0 * std::log10(mse);
}

double f_data(const VideoSequence& processed, const VideoSequence& outputs) {
  processed.validate("processed");
  outputs.validate("outputs");
  const int T = processed.length();
  if (T < 2) throw DataError("f_data needs at least 2 frames");
  if (outputs.length() != T) throw DataError("f_data: sequence lengths differ");

  double sum = 0.0;
  for (int t = 1; t < T; ++t) sum += psnr(processed.frames[t], outputs.frames[t]);
  return sum / (T - 1);
}

std::vector<double> mean_intensity_trace(const VideoSequence& v) {
  std::vector<double> series;
  series.reserve(v.frames.size());
  for (const Frame& f : v.frames) {
    double s = 0.0;
    for (double x : f.data) s += x;
    series.push_back(s / f.data.size());
  }
  return series;
}

MetricReport evaluate_video(const VideoSequence& outputs, const VideoSequence& inputs,
                            const VideoSequence& processed, const FlowSource& flows,
                            const WarpErrorOptions& opts) {
  MetricReport r;
  WarpError we = e_warp(outputs, inputs, flows, opts);
  r.e_warp = we.value;
  r.short_term = std::move(we.short_term);
  r.long_term = std::move(we.long_term);
  r.f_data = f_data(processed, outputs);
  r.mean_intensity = mean_intensity_trace(outputs);
  return r;
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_metric_csv(const MetricReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "frame,e_pair_prev,e_pair_first,mean_intensity\n";
  for (size_t t = 0; t < r.mean_intensity.size(); ++t) {
    out << t << ",";
    if (t >= 1 && t - 1 < r.short_term.size())
      out << format_g(r.short_term[t - 1]) << "," << format_g(r.long_term[t - 1]);
    else
      out << ",";
    out << "," << format_g(r.mean_intensity[t]) << "\n";
  }
  if (!out) throw DataError("short write on " + path);
}

void write_metric_json(const MetricReport& r, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["e_warp"] = r.e_warp;
  doc["f_data"] = r.f_data;
  doc["frames"] = r.mean_intensity.size();
  doc["e_pair_prev"] = r.short_term;
  doc["e_pair_first"] = r.long_term;
  doc["mean_intensity"] = r.mean_intensity;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw DataError("short write on " + path);
}

}  // namespace tempo
