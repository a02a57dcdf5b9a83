#include "tempo/losses.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "tempo/errors.hpp"
#include "tempo/kernels.hpp"
#include "tempo/rng.hpp"

namespace tempo {

LossKind loss_from_string(const std::string& s) {
  if (s == "l1") return LossKind::kL1;
  if (s == "l2") return LossKind::kL2;
  if (s == "perceptual") return LossKind::kPerceptual;
  if (s == "cross_entropy") return LossKind::kCrossEntropy;
  throw ConfigError("unknown loss '" + s + "' (expected l1, l2, perceptual, or cross_entropy)");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kL1: return "l1";
    case LossKind::kL2: return "l2";
    case LossKind::kPerceptual: return "perceptual";
    case LossKind::kCrossEntropy: return "cross_entropy";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// feature extractor

namespace {
constexpr int kFeatChannels[4] = {3, 16, 32, 64};
constexpr char kFeatMagic[8] = {'T', 'M', 'P', 'O', 'F', 'E', 'A', 'T'};

int mirror_index(int q, int n) {
  while (q < 0 || q >= n) {
    if (q < 0) q = -q - 1;
    if (q >= n) q = 2 * n - 1 - q;
  }
  return q;
}

// Transpose of pad_to_multiple: folds gradients of mirrored cells back onto
// their source pixels.
template <typename T>
Image<T> pad_backward(const Image<T>& gpad, int orig_h, int orig_w) {
  Image<T> g(gpad.channels, orig_h, orig_w, T(0));
  for (int c = 0; c < gpad.channels; ++c)
    for (int y = 0; y < gpad.height; ++y) {
      const int sy = mirror_index(y, orig_h);
      for (int x = 0; x < gpad.width; ++x)
        g.at(c, sy, mirror_index(x, orig_w)) += gpad.at(c, y, x);
    }
  return g;
}
}  // namespace

template <typename T>
struct FeatureExtractor<T>::Trace {
  PadInfo pad;
  Image<T> x3;              // padded 3-channel input
  Image<T> c0, f1, p1, c1, f2, p2, c2, f3;
  bool replicated = false;  // true when the original input was 1-channel
};

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::make_default(uint64_t seed) {
  FeatureExtractor fe;
  Rng rng(seed);
  for (int s = 0; s < 3; ++s) {
    ConvParam<T> p;
    p.name = "feat" + std::to_string(s + 1);
    p.in_ch = kFeatChannels[s];
    p.out_ch = kFeatChannels[s + 1];
    p.w.resize(static_cast<size_t>(p.out_ch) * p.in_ch * 9);
    p.b.assign(p.out_ch, T(0));
    const double limit = std::sqrt(3.0 / (9.0 * p.in_ch));
    for (auto& v : p.w) v = static_cast<T>(rng.uniform(-limit, limit));
    fe.convs_.push_back(std::move(p));
  }
  return fe;
}

template <typename T>
void FeatureExtractor<T>::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write feature weights: " + path);
  f.write(kFeatMagic, sizeof(kFeatMagic));
  const uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  for (const auto& p : convs_) {
    const uint32_t io[2] = {static_cast<uint32_t>(p.in_ch), static_cast<uint32_t>(p.out_ch)};
    f.write(reinterpret_cast<const char*>(io), sizeof(io));
    std::vector<double> buf(p.w.begin(), p.w.end());
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
    buf.assign(p.b.begin(), p.b.end());
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
  }
  if (!f) throw DataError("failed writing feature weights: " + path);
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open feature weights: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (f.gcount() != sizeof(magic) || std::memcmp(magic, kFeatMagic, sizeof(magic)) != 0)
    throw DataError("not a feature-weight file: " + path);
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1) throw DataError("unsupported feature-weight version: " + path);

  FeatureExtractor fe;
  for (int s = 0; s < 3; ++s) {
    uint32_t io[2];
    f.read(reinterpret_cast<char*>(io), sizeof(io));
    if (!f || io[0] != static_cast<uint32_t>(kFeatChannels[s]) ||
        io[1] != static_cast<uint32_t>(kFeatChannels[s + 1]))
      throw DataError("corrupt feature-weight file: " + path);
    ConvParam<T> p;
    p.name = "feat" + std::to_string(s + 1);
    p.in_ch = static_cast<int>(io[0]);
    p.out_ch = static_cast<int>(io[1]);
    std::vector<double> buf(static_cast<size_t>(p.out_ch) * p.in_ch * 9);
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(double)))
      throw DataError("corrupt feature-weight file (truncated): " + path);
    p.w.assign(buf.begin(), buf.end());
    buf.resize(p.out_ch);
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(double)))
      throw DataError("corrupt feature-weight file (truncated): " + path);
    p.b.assign(buf.begin(), buf.end());
    fe.convs_.push_back(std::move(p));
  }
  return fe;
}

template <typename T>
typename FeatureExtractor<T>::Taps FeatureExtractor<T>::forward(const Image<T>& x,
                                                                Trace* trace) const {
  if (x.channels != 1 && x.channels != 3)
    throw ConfigError("perceptual features need 1- or 3-channel images, got " +
                      std::to_string(x.channels));
  Trace local;
  Trace& tr = trace ? *trace : local;
  tr.replicated = (x.channels == 1);

  Image<T> x3;
  if (tr.replicated) {
    x3 = Image<T>(3, x.height, x.width);
    for (int c = 0; c < 3; ++c)
      std::memcpy(x3.plane(c), x.plane(0), x.plane_size() * sizeof(T));
  } else {
    x3 = x;
  }
  tr.x3 = pad_to_multiple(x3, 4, &tr.pad);
  const int h = tr.x3.height, w = tr.x3.width;

  auto conv = [&](const Image<T>& in, const ConvParam<T>& p) {
    Image<T> out(p.out_ch, in.height, in.width);
    kernels::conv3x3(in.data.data(), p.in_ch, in.height, in.width, p.w.data(), p.b.data(),
                     p.out_ch, out.data.data());
    return out;
  };
  auto relu = [&](const Image<T>& in) {
    Image<T> out(in.channels, in.height, in.width);
    kernels::leaky_relu(in.data.data(), in.data.size(), static_cast<T>(kLeakySlope),
                        out.data.data());
    return out;
  };
  auto pool = [&](const Image<T>& in) {
    Image<T> out(in.channels, in.height / 2, in.width / 2);
    kernels::avgpool2(in.data.data(), in.channels, in.height, in.width, out.data.data());
    return out;
  };

  tr.c0 = conv(tr.x3, convs_[0]);
  tr.f1 = relu(tr.c0);
  tr.p1 = pool(tr.f1);
  tr.c1 = conv(tr.p1, convs_[1]);
  tr.f2 = relu(tr.c1);
  tr.p2 = pool(tr.f2);
  tr.c2 = conv(tr.p2, convs_[2]);
  tr.f3 = relu(tr.c2);
  (void)h;
  (void)w;
  return Taps{tr.f1, tr.f2, tr.f3};
}

template <typename T>
Image<T> FeatureExtractor<T>::backward(const Trace& tr, const Taps& dtaps) const {
  auto relu_back = [&](const Image<T>& pre, const Image<T>& g) {
    Image<T> out(pre.channels, pre.height, pre.width);
    kernels::leaky_relu_grad(pre.data.data(), g.data.data(), pre.data.size(),
                             static_cast<T>(kLeakySlope), out.data.data());
    return out;
  };
  auto conv_back = [&](const ConvParam<T>& p, const Image<T>& in, const Image<T>& g) {
    Image<T> out(p.in_ch, in.height, in.width);
    kernels::conv3x3_grad_input(g.data.data(), p.out_ch, in.height, in.width, p.w.data(), p.in_ch,
                                out.data.data());
    return out;
  };
  auto pool_back = [&](const Image<T>& in, const Image<T>& g) {
    Image<T> out(in.channels, in.height, in.width);
    kernels::avgpool2_grad(g.data.data(), in.channels, in.height, in.width, out.data.data());
    return out;
  };
  auto add = [](Image<T>& a, const Image<T>& b) {
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  };

  // stage 3 back to p2
  Image<T> gc2 = relu_back(tr.c2, dtaps.f3);
  Image<T> gp2 = conv_back(convs_[2], tr.p2, gc2);
  // stage 2
  Image<T> gf2 = pool_back(tr.f2, gp2);
  add(gf2, dtaps.f2);
  Image<T> gc1 = relu_back(tr.c1, gf2);
  Image<T> gp1 = conv_back(convs_[1], tr.p1, gc1);
  // stage 1
  Image<T> gf1 = pool_back(tr.f1, gp1);
  add(gf1, dtaps.f1);
  Image<T> gc0 = relu_back(tr.c0, gf1);
  Image<T> gx3 = conv_back(convs_[0], tr.x3, gc0);

  Image<T> gpadded = pad_backward(gx3, tr.pad.orig_h, tr.pad.orig_w);
  if (!tr.replicated) return gpadded;
  Image<T> g1(1, gpadded.height, gpadded.width, T(0));
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < g1.data.size(); ++i) g1.data[i] += gpadded.plane(c)[i];
  return g1;
}

// ---------------------------------------------------------------------------
// losses

namespace {

template <typename T>
void check_loss_args(const Image<T>& pred, const Image<T>& target, const Image<T>* weight) {
  if (!pred.same_shape(target))
    throw ConfigError("data_loss: pred " + pred.shape_str() + " vs target " + target.shape_str());
  if (weight) {
    if (weight->channels != 1 || weight->height != pred.height || weight->width != pred.width)
      throw ConfigError("data_loss: weight map must be 1x" + std::to_string(pred.height) + "x" +
                        std::to_string(pred.width) + ", got " + weight->shape_str());
    for (const T v : weight->data)
      if (!(v >= T(0))) throw ConfigError("data_loss: weights must be non-negative");
  }
}

template <typename T>
double weight_total(const Image<T>& pred, const Image<T>* weight) {
  if (!weight) return static_cast<double>(pred.plane_size());
  double s = 0.0;
  for (const T v : weight->data) s += static_cast<double>(v);
  return s;
}

template <typename T>
double wval(const Image<T>* weight, int y, int x) {
  return weight ? static_cast<double>(weight->at(0, y, x)) : 1.0;
}

template <typename T>
LossResult<T> pixel_l1(const Image<T>& pred, const Image<T>& target, const Image<T>* weight) {
  LossResult<T> res;
  res.grad = Image<T>(pred.channels, pred.height, pred.width, T(0));
  const double wsum = weight_total(pred, weight);
  if (wsum == 0.0) return res;  // no scored pixels
  double acc = 0.0;
  const double gscale = 1.0 / (pred.channels * wsum);
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const double wv = wval(weight, y, x);
      for (int c = 0; c < pred.channels; ++c) {
        const double d = static_cast<double>(pred.at(c, y, x)) - target.at(c, y, x);
        acc += wv * std::abs(d);
        res.grad.at(c, y, x) = static_cast<T>(wv * gscale * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)));
      }
    }
  res.value = acc * gscale;
  return res;
}

template <typename T>
LossResult<T> pixel_l2(const Image<T>& pred, const Image<T>& target, const Image<T>* weight) {
  LossResult<T> res;
  res.grad = Image<T>(pred.channels, pred.height, pred.width, T(0));
  const double wsum = weight_total(pred, weight);
  if (wsum == 0.0) return res;
  double acc = 0.0;
  const double gscale = 1.0 / (pred.channels * wsum);
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const double wv = wval(weight, y, x);
      for (int c = 0; c < pred.channels; ++c) {
        const double d = static_cast<double>(pred.at(c, y, x)) - target.at(c, y, x);
        acc += wv * d * d;
        res.grad.at(c, y, x) = static_cast<T>(wv * gscale * 2.0 * d);
      }
    }
  res.value = acc * gscale;
  return res;
}

template <typename T>
LossResult<T> cross_entropy(const Image<T>& pred, const Image<T>& target,
                            const Image<T>* weight) {
  constexpr double kEps = 1e-12;
  LossResult<T> res;
  res.grad = Image<T>(pred.channels, pred.height, pred.width, T(0));
  const double wsum = weight_total(pred, weight);
  if (wsum == 0.0) return res;
  double acc = 0.0;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const double wv = wval(weight, y, x);
      for (int c = 0; c < pred.channels; ++c) {
        const double t = target.at(c, y, x);
        if (t == 0.0) continue;
        const double p = static_cast<double>(pred.at(c, y, x));
        if (p > kEps) {
          acc += -wv * t * std::log(p);
          res.grad.at(c, y, x) = static_cast<T>(-wv * t / (p * wsum));
        } else {
          acc += -wv * t * std::log(kEps);  // clamped: flat, zero gradient
        }
      }
    }
  res.value = acc / wsum;
  return res;
}

// mean absolute difference in tap space, with gradients w.r.t. tap a
template <typename T>
double tap_l1(const Image<T>& a, const Image<T>& b, Image<T>* ga) {
  *ga = Image<T>(a.channels, a.height, a.width, T(0));
  const double scale = 1.0 / static_cast<double>(a.data.size());
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += std::abs(d);
    ga->data[i] = static_cast<T>(scale * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)));
  }
  return acc * scale;
}

template <typename T>
LossResult<T> perceptual(const Image<T>& pred, const Image<T>& target, const Image<T>* weight,
                         const FeatureExtractor<T>* features, double perceptual_weight) {
  if (!features) throw ConfigError("perceptual loss requires feature weights");
  // masked pixel term
  LossResult<T> res = pixel_l1(pred, target, weight);

  // feature term on the weight-multiplied images, so masked-out content
  // cannot influence the comparison
  auto apply_mask = [&](const Image<T>& img) {
    if (!weight) return img;
    Image<T> out = img;
    for (int c = 0; c < out.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(c, y, x) *= weight->at(0, y, x);
    return out;
  };
  const Image<T> mp = apply_mask(pred);
  const Image<T> mt = apply_mask(target);

  typename FeatureExtractor<T>::Trace tr_p, tr_t;
  const auto taps_p = features->forward(mp, &tr_p);
  const auto taps_t = features->forward(mt, &tr_t);

  typename FeatureExtractor<T>::Taps dtaps;
  double feat = 0.0;
  feat += tap_l1(taps_p.f1, taps_t.f1, &dtaps.f1);
  feat += tap_l1(taps_p.f2, taps_t.f2, &dtaps.f2);
  feat += tap_l1(taps_p.f3, taps_t.f3, &dtaps.f3);
  feat /= 3.0;
  const double fw = perceptual_weight / 3.0;
  for (auto* g : {&dtaps.f1, &dtaps.f2, &dtaps.f3})
    for (auto& v : g->data) v = static_cast<T>(v * fw);

  Image<T> gx = features->backward(tr_p, dtaps);
  if (weight) {  // chain through the mask multiplication
    for (int c = 0; c < gx.channels; ++c)
      for (int y = 0; y < gx.height; ++y)
        for (int x = 0; x < gx.width; ++x) gx.at(c, y, x) *= weight->at(0, y, x);
  }
  res.value += perceptual_weight * feat;
  for (size_t i = 0; i < res.grad.data.size(); ++i) res.grad.data[i] += gx.data[i];
  return res;
}

}  // namespace

template <typename T>
LossResult<T> data_loss(const Image<T>& pred, const Image<T>& target, LossKind kind,
                        std::type_identity_t<const Image<T>*> weight,
                        std::type_identity_t<const FeatureExtractor<T>*> features,
                        double perceptual_weight) {
  check_loss_args(pred, target, weight);
  switch (kind) {
    case LossKind::kL1: return pixel_l1(pred, target, weight);
    case LossKind::kL2: return pixel_l2(pred, target, weight);
    case LossKind::kCrossEntropy: return cross_entropy(pred, target, weight);
    case LossKind::kPerceptual:
      return perceptual(pred, target, weight, features, perceptual_weight);
  }
  throw ConfigError("data_loss: bad loss kind");
}

template <typename T>
Image<T> pixel_distance(const Image<T>& a, const Image<T>& b) {
  if (!a.same_shape(b))
    throw ConfigError("pixel_distance: " + a.shape_str() + " vs " + b.shape_str());
  Image<T> d(1, a.height, a.width);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      double s = 0.0;
      for (int c = 0; c < a.channels; ++c)
        s += std::abs(static_cast<double>(a.at(c, y, x)) - b.at(c, y, x));
      d.at(0, y, x) = static_cast<T>(s / a.channels);
    }
  return d;
}

// ---------------------------------------------------------------------------

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template LossResult<float> data_loss<float>(const Image<float>&, const Image<float>&, LossKind,
                                            const Image<float>*, const FeatureExtractor<float>*,
                                            double);
template LossResult<double> data_loss<double>(const Image<double>&, const Image<double>&,
                                              LossKind, const Image<double>*,
                                              const FeatureExtractor<double>*, double);
template Image<float> pixel_distance<float>(const Image<float>&, const Image<float>&);
template Image<double> pixel_distance<double>(const Image<double>&, const Image<double>&);

}  // namespace tempo
