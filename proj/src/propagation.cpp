#include "tempo/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "tempo/errors.hpp"
#include "tempo/losses.hpp"

namespace tempo {

PropagationTask task_from_string(const std::string& s) {
  if (s == "color") return PropagationTask::kColor;
  if (s == "style") return PropagationTask::kStyle;
  if (s == "segmentation") return PropagationTask::kSegmentation;
  throw ConfigError("unknown propagation task '" + s + "'");
}

std::string to_string(PropagationTask t) {
  switch (t) {
    case PropagationTask::kColor: return "color";
    case PropagationTask::kStyle: return "style";
    case PropagationTask::kSegmentation: return "segmentation";
  }
  throw ConfigError("bad propagation task value");
}

void PropagationConfig::validate() const {
  train.validate();
  if (train.irt)
    throw ConfigError("propagation drives a single head; reweighted training does not apply");
  if (train.coarse_to_fine)
    throw ConfigError("coarse-to-fine scheduling is a consistency-training feature");
  if (k_iterations < 1) throw ConfigError("k_iterations must be >= 1");
  if (augmentation.count(AugmentKind::kCrop) && (crop_h < 1 || crop_w < 1))
    throw ConfigError("crop augmentation needs positive crop_h and crop_w");
  if (augmentation.count(AugmentKind::kCopyPaste) && task != PropagationTask::kSegmentation)
    throw ConfigError("copy-paste augmentation only applies to segmentation");
}

namespace {

Frame rot90_cw(const Frame& f) {
  Frame out(f.channels, f.width, f.height);
  for (int c = 0; c < f.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = f.at(c, f.height - 1 - x, y);
  return out;
}

Frame hflip(const Frame& f) {
  Frame out(f.channels, f.height, f.width);
  for (int c = 0; c < f.channels; ++c)
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) out.at(c, y, x) = f.at(c, y, f.width - 1 - x);
  return out;
}

Frame crop(const Frame& f, int y0, int x0, int h, int w) {
  Frame out(f.channels, h, w);
  for (int c = 0; c < f.channels; ++c)
    for (int y = 0; y < h; ++y)
      std::memcpy(out.plane(c) + static_cast<size_t>(y) * w,
                  f.plane(c) + static_cast<size_t>(y0 + y) * f.width + x0, sizeof(double) * w);
  return out;
}

// Foreground test for copy-paste: non-background argmax on multi-channel
// label maps, >0.5 on single-channel masks.
bool is_foreground(const Frame& target, int y, int x) {
  if (target.channels == 1) return target.at(0, y, x) > 0.5;
  int best = 0;
  double bv = target.at(0, y, x);
  for (int c = 1; c < target.channels; ++c)
    if (target.at(c, y, x) > bv) bv = target.at(c, y, x), best = c;
  return best != 0;
}

void copy_paste(Frame& input, Frame& target, Rng& rng) {
  const int h = input.height, w = input.width;
  int ymin = h, ymax = -1, xmin = w, xmax = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (is_foreground(target, y, x)) {
        ymin = std::min(ymin, y), ymax = std::max(ymax, y);
        xmin = std::min(xmin, x), xmax = std::max(xmax, x);
      }
  if (ymax < 0) return;  // nothing to paste

  const int dy = -ymin + rng.uniform_int(h - (ymax - ymin));
  const int dx = -xmin + rng.uniform_int(w - (xmax - xmin));
  const Frame snap_in = input, snap_tg = target;
  for (int y = ymin; y <= ymax; ++y)
    for (int x = xmin; x <= xmax; ++x) {
      if (!is_foreground(snap_tg, y, x)) continue;
      for (int c = 0; c < input.channels; ++c) input.at(c, y + dy, x + dx) = snap_in.at(c, y, x);
      for (int c = 0; c < target.channels; ++c)
        target.at(c, y + dy, x + dx) = snap_tg.at(c, y, x);
    }
}

// Gradient on the cropped output embedded into the padded grid (zeros in the
// padding), the exact transpose of crop_to.
Image<float> embed_grad(const Image<float>& g, int full_h, int full_w) {
  Image<float> out(g.channels, full_h, full_w);
  for (int c = 0; c < g.channels; ++c)
    for (int y = 0; y < g.height; ++y)
      std::memcpy(out.plane(c) + static_cast<size_t>(y) * full_w,
                  g.plane(c) + static_cast<size_t>(y) * g.width, sizeof(float) * g.width);
  return out;
}

// Single-head gradient-step machinery shared by reference-only training and
// progressive propagation.
struct Stepper {
  Network<float> net;
  Adam<float> adam;
  Gradients<float> grads;
  LossKind loss;
  FeatureExtractor<float> feats;
  const FeatureExtractor<float>* fp = nullptr;
  double perceptual_weight = 1.0;
  int multiple = 1;

  Stepper(const NetSpec& spec, const TrainConfig& cfg)
      : net(Network<float>::build(spec)), adam(cfg.learning_rate), loss(cfg.loss),
        perceptual_weight(cfg.perceptual_weight), multiple(spec.size_multiple()) {
    if (cfg.loss == LossKind::kPerceptual) {
      feats = cfg.feature_weights.empty() ? FeatureExtractor<float>::make_default()
                                          : FeatureExtractor<float>::load(cfg.feature_weights);
      fp = &feats;
    }
  }

  double step(const Frame& in, const Frame& tgt) {
    PadInfo pad;
    Image<float> input = pad_to_multiple(image_cast<float>(in), multiple, &pad);
    Image<float> target = image_cast<float>(tgt);

    Tape<float> tape;
    std::vector<Image<float>> heads = net.forward(input, &tape);
    Image<float> pred = crop_to(heads[0], pad.orig_h, pad.orig_w);
    LossResult<float> lr = data_loss(pred, target, loss, nullptr, fp, perceptual_weight);
    if (!std::isfinite(lr.value)) throw NumericError("non-finite training loss");

    std::vector<Image<float>> head_grads(1);
    head_grads[0] = embed_grad(lr.grad, input.height, input.width);
    net.backward(tape, head_grads, &grads);
    auto& params = net.params();
    for (size_t i = 0; i < params.size(); ++i) {
      adam.update(static_cast<int>(2 * i), params[i].w, grads.w[i]);
      adam.update(static_cast<int>(2 * i + 1), params[i].b, grads.b[i]);
    }
    return lr.value;
  }
};

void check_single_head(const NetSpec& spec, const PairedVideo& pv) {
  if (spec.heads != 1) throw ConfigError("propagation drives exactly 1 head");
  if (spec.in_channels != pv.inputs.channels())
    throw ConfigError("net expects " + std::to_string(spec.in_channels) +
                      " input channels, video has " + std::to_string(pv.inputs.channels()));
  const std::vector<int> refs = pv.reference_indices();
  if (spec.out_channels != pv.targets[refs[0]]->channels)
    throw ConfigError("net emits " + std::to_string(spec.out_channels) +
                      " channels, reference targets have " +
                      std::to_string(pv.targets[refs[0]]->channels));
}

int sample_queue(const MemoryQueue& q, QueueSampling mode, Rng& rng) {
  const int n = static_cast<int>(q.entries.size());
  if (mode == QueueSampling::kUniform) return rng.uniform_int(n);
  // Recency weighting: entry i drawn with weight i+1, favoring fresh pseudo
  // labels over the distant reference.
  const int total = n * (n + 1) / 2;
  int r = rng.uniform_int(total);
  for (int i = 0; i < n; ++i) {
    r -= i + 1;
    if (r < 0) return i;
  }
  return n - 1;
}

}  // namespace

std::pair<Frame, Frame> augment(const Frame& input, const Frame& target,
                                const PropagationConfig& cfg, Rng& rng) {
  if (input.height != target.height || input.width != target.width)
    throw ConfigError("augment: input/target size mismatch");
  Frame in = input, tg = target;

  if (cfg.augmentation.count(AugmentKind::kRotate)) {
    const int k = rng.uniform_int(4);
    for (int i = 0; i < k; ++i) in = rot90_cw(in), tg = rot90_cw(tg);
  }
  if (cfg.augmentation.count(AugmentKind::kFlip) && rng.uniform_int(2) == 1) {
    in = hflip(in);
    tg = hflip(tg);
  }
  if (cfg.augmentation.count(AugmentKind::kCrop)) {
    if (cfg.crop_h > in.height || cfg.crop_w > in.width)
      throw ConfigError("crop " + std::to_string(cfg.crop_w) + "x" + std::to_string(cfg.crop_h) +
                        " exceeds frame size " + std::to_string(in.width) + "x" +
                        std::to_string(in.height));
    const int y0 = rng.uniform_int(in.height - cfg.crop_h + 1);
    const int x0 = rng.uniform_int(in.width - cfg.crop_w + 1);
    in = crop(in, y0, x0, cfg.crop_h, cfg.crop_w);
    tg = crop(tg, y0, x0, cfg.crop_h, cfg.crop_w);
  }
  if (cfg.augmentation.count(AugmentKind::kCopyPaste)) copy_paste(in, tg, rng);
  return {std::move(in), std::move(tg)};
}

TrainResult train_reference_only(const PairedVideo& pv, const NetSpec& spec,
                                 const PropagationConfig& cfg, const TrainCallbacks& cb) {
  cfg.validate();
  spec.validate();
  pv.validate();
  check_single_head(spec, pv);

  const std::vector<int> refs = pv.reference_indices();
  const int R = static_cast<int>(refs.size());
  Stepper st(spec, cfg.train);
  Rng rng(cfg.train.seed);

  TrainResult res;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    Rng erng = rng.fork(epoch);
    double sum = 0.0;
    for (int it = 0; it < R; ++it) {
      const int t = refs[erng.uniform_int(R)];
      auto [in, tg] = augment(pv.inputs.frames[t], *pv.targets[t], cfg, erng);
      const double loss = st.step(in, tg);
      sum += loss;
      ++res.iterations;
      if (cb.on_iteration) cb.on_iteration({epoch, it, t, loss, false});
    }
    res.epoch_losses.push_back(sum / R);
    res.epochs_run = epoch + 1;
    if (cb.on_epoch) cb.on_epoch({epoch, res.epoch_losses.back(), &st.net});
    if (cfg.train.auto_stop &&
        auto_stop_check(res.epoch_losses, cfg.train.auto_stop_window,
                        cfg.train.effective_auto_stop_threshold())) {
      res.stop = StopReason::kAutoStop;
      break;
    }
  }
  res.net = std::move(st.net);
  return res;
}

PpplResult propagate_pppl(const PairedVideo& pv, const NetSpec& spec,
                          const PropagationConfig& cfg, const TrainCallbacks& cb) {
  cfg.validate();
  spec.validate();
  pv.validate();
  if (pv.reference_indices() != std::vector<int>{0})
    throw DataError("progressive propagation needs exactly one reference, at frame 0");
  const int T = pv.inputs.length();
  if (T < 2) throw DataError("progressive propagation needs at least 2 frames");
  check_single_head(spec, pv);

  PpplResult res;
  res.queue.entries.push_back({pv.inputs.frames[0], *pv.targets[0], false});
  Stepper st(spec, cfg.train);
  Rng rng(cfg.train.seed);

  for (int t = 1; t < T; ++t) {
    Rng frng = rng.fork(t);
    double sum = 0.0;
    for (int k = 0; k < cfg.k_iterations; ++k) {
      const int idx = sample_queue(res.queue, cfg.sampling, frng);
      const QueueEntry& e = res.queue.entries[idx];
      auto [in, tg] = augment(e.input, e.target, cfg, frng);
      const double loss = st.step(in, tg);
      sum += loss;
      ++res.iterations;
      if (cb.on_iteration) cb.on_iteration({t, k, idx, loss, false});
    }
    if (cb.on_epoch) cb.on_epoch({t, sum / cfg.k_iterations, &st.net});
    res.queue.entries.push_back({pv.inputs.frames[t], infer_frame(st.net, pv.inputs.frames[t]),
                                 true});
  }

  res.outputs.frame_rate = pv.inputs.frame_rate;
  for (int t = 0; t < T; ++t) {
    // The reference frame always gets a final-pass inference; adopted frames
    // keep their stored pseudo labels unless a full re-inference is asked
    // for.
    if (t == 0 || cfg.reinfer_all)
      res.outputs.frames.push_back(infer_frame(st.net, pv.inputs.frames[t]));
    else
      res.outputs.frames.push_back(res.queue.entries[t].target);
  }
  res.net = std::move(st.net);
  return res;
}

SegmentationResult propagate_segmentation(const PairedVideo& pv, const NetSpec& spec,
                                          const PropagationConfig& cfg,
                                          const TrainCallbacks& cb) {
  if (cfg.task != PropagationTask::kSegmentation)
    throw ConfigError("segmentation propagation requires task=segmentation");
  if (cfg.train.loss != LossKind::kCrossEntropy)
    throw ConfigError("segmentation propagation trains with cross-entropy loss");
  if (spec.final_activation != FinalActivation::kSoftmax)
    throw ConfigError("segmentation propagation needs a softmax head");
  if (spec.out_channels < 2) throw ConfigError("segmentation needs at least 2 classes");

  for (size_t i = 0; i < pv.targets.size(); ++i) {
    if (!pv.targets[i].has_value()) continue;
    const Frame& t = *pv.targets[i];
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) {
        double s = 0.0;
        for (int c = 0; c < t.channels; ++c) s += t.at(c, y, x);
        if (std::abs(s - 1.0) > 1e-5)
          throw DataError("non-normalized label map at frame " + std::to_string(i) +
                          ": per-pixel class sum " + std::to_string(s));
      }
  }

  PpplResult p = propagate_pppl(pv, spec, cfg, cb);
  SegmentationResult res;
  res.labels = std::move(p.outputs);
  res.queue = std::move(p.queue);
  res.net = std::move(p.net);
  res.masks.frame_rate = res.labels.frame_rate;
  // Mask frames hold class ids, not [0,1] pixel values.
  for (const Frame& f : res.labels.frames) res.masks.frames.push_back(argmax_ids(f));
  return res;
}

double mask_iou(const Image<double>& a, const Image<double>& b, int class_id) {
  if (a.channels != 1 || b.channels != 1)
    throw ConfigError("mask_iou expects 1-channel id maps");
  if (a.height != b.height || a.width != b.width)
    throw ConfigError("mask_iou: shape mismatch");
  long inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const bool in_a = std::llround(a.data[i]) == class_id;
    const bool in_b = std::llround(b.data[i]) == class_id;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace tempo
