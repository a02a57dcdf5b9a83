#include "tempo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>

#include "tempo/errors.hpp"
#include "tempo/kernels.hpp"
#include "tempo/rng.hpp"

namespace tempo {

template <typename T>
void Adam<T>::update(int slot, std::vector<T>& param, const std::vector<T>& grad) {
  if (param.size() != grad.size()) throw ConfigError("adam: parameter/gradient size mismatch");
  if (slot < 0) throw ConfigError("adam: negative slot");
  if (static_cast<size_t>(slot) >= slots_.size()) slots_.resize(slot + 1);
  Slot& s = slots_[slot];
  if (s.m.empty()) {
    s.m.assign(param.size(), 0.0);
    s.v.assign(param.size(), 0.0);
  } else if (s.m.size() != param.size()) {
    throw ConfigError("adam: slot reused with a different parameter size");
  }

  ++s.t;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
    s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
    const double step = lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
    param[i] = static_cast<T>(static_cast<double>(param[i]) - step);
  }
}

template class Adam<float>;
template class Adam<double>;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be a positive finite number");
  if (batch_size != 1)
    throw ConfigError("batch_size must be 1: training fits exactly one frame pair per iteration");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(perceptual_weight >= 0.0) || !std::isfinite(perceptual_weight))
    throw ConfigError("perceptual_weight must be a non-negative finite number");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be > 0");
  if (warmup_iterations < 0) throw ConfigError("warmup_iterations must be >= 0");
  if (main_mode_frame < 0) throw ConfigError("main_mode_frame must be >= 0");
  if (coarse_to_fine) {
    if (!(coarse_scale > 0.0) || !(coarse_scale < 1.0))
      throw ConfigError("coarse_scale must be in (0, 1)");
    if (coarse_epoch_percent < 0 || coarse_epoch_percent > 100)
      throw ConfigError("coarse_epoch_percent must be in [0, 100]");
  }
  if (auto_stop_window < 2) throw ConfigError("auto_stop_window must be >= 2");
  if (!(auto_stop_threshold >= 0.0) || !std::isfinite(auto_stop_threshold))
    throw ConfigError("auto_stop_threshold must be a non-negative finite number");
}

double TrainConfig::effective_auto_stop_threshold() const {
  if (auto_stop_threshold > 0.0) return auto_stop_threshold;
  return loss == LossKind::kPerceptual ? 1e-8 : 1e-7;
}

template <typename T>
Image<T> compute_confidence(const Image<T>& main, const Image<T>& minor, const Image<T>& target,
                            double delta) {
  if (!main.same_shape(minor) || !main.same_shape(target))
    throw ConfigError("confidence: head/target shape mismatch");
  Image<T> d_main = pixel_distance(main, target);
  Image<T> d_minor = pixel_distance(minor, target);
  Image<T> conf(1, main.height, main.width);
  for (size_t i = 0; i < conf.data.size(); ++i) {
    const double bar = std::max(static_cast<double>(d_minor.data[i]), delta);
    conf.data[i] = static_cast<double>(d_main.data[i]) < bar ? T(1) : T(0);
  }
  return conf;
}

template <typename T>
IrtResult<T> irt_loss(const Image<T>& main, const Image<T>& minor, const Image<T>& target,
                      const Image<T>& confidence, LossKind kind,
                      std::type_identity_t<const FeatureExtractor<T>*> features,
                      double perceptual_weight) {
  Image<T> inv = confidence;
  for (T& v : inv.data) v = T(1) - v;
  LossResult<T> lm = data_loss(main, target, kind, &confidence, features, perceptual_weight);
  LossResult<T> ln = data_loss(minor, target, kind, &inv, features, perceptual_weight);
  return {lm.value + ln.value, std::move(lm.grad), std::move(ln.grad)};
}

bool auto_stop_check(const std::vector<double>& epoch_losses, int k, double threshold) {
  if (k < 2) throw ConfigError("auto-stop window must be >= 2");
  if (!(threshold > 0.0) || !std::isfinite(threshold))
    throw ConfigError("auto-stop threshold must be a positive finite number");
  if (static_cast<int>(epoch_losses.size()) < k) return false;

  const double* win = epoch_losses.data() + (epoch_losses.size() - k);
  double mx = 0.0;
  for (int i = 0; i < k; ++i) {
    if (!std::isfinite(win[i])) throw NumericError("non-finite loss in auto-stop window");
    mx = std::max(mx, std::abs(win[i]));
  }
  if (mx == 0.0) return true;

  double mean = 0.0;
  for (int i = 0; i < k; ++i) mean += win[i] / mx;
  mean /= k;
  double var = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = win[i] / mx - mean;
    var += d * d;
  }
  var /= k;
  return var < threshold;
}

namespace {

bool same_arch(NetSpec a, NetSpec b) {
  a.rng_seed = 0;
  b.rng_seed = 0;
  return a == b;
}

Frame scale_frame(const Frame& f, double scale) {
  const int oh = std::max(1, static_cast<int>(std::lround(f.height * scale)));
  const int ow = std::max(1, static_cast<int>(std::lround(f.width * scale)));
  Frame out(f.channels, oh, ow);
  kernels::resize_bilinear(f.data.data(), f.channels, f.height, f.width, oh, ow, out.data.data());
  return out;
}

// Input frame cast to float and mirror-padded so the net can run on it.
Image<float> prep_input(const Frame& f, int multiple, PadInfo* pad) {
  return pad_to_multiple(image_cast<float>(f), multiple, pad);
}

// Embeds a gradient on the cropped output into the padded output grid;
// padded rows/columns get zero (the exact transpose of the crop).
Image<float> embed_grad(const Image<float>& g, int full_h, int full_w) {
  Image<float> out(g.channels, full_h, full_w);
  for (int c = 0; c < g.channels; ++c)
    for (int y = 0; y < g.height; ++y)
      std::memcpy(out.plane(c) + static_cast<size_t>(y) * full_w,
                  g.plane(c) + static_cast<size_t>(y) * g.width, sizeof(float) * g.width);
  return out;
}

// One training phase's view of the data: frames at a fixed scale.
struct PhaseData {
  std::vector<Frame> inputs;   // scaled (or borrowed) inputs
  std::vector<Frame> targets;  // scaled (or borrowed) targets
};

PhaseData make_phase_data(const PairedVideo& pv, double scale) {
  PhaseData d;
  d.inputs.reserve(pv.inputs.frames.size());
  d.targets.reserve(pv.targets.size());
  for (int t = 0; t < pv.inputs.length(); ++t) {
    if (scale == 1.0) {
      d.inputs.push_back(pv.inputs.frames[t]);
      d.targets.push_back(*pv.targets[t]);
    } else {
      d.inputs.push_back(scale_frame(pv.inputs.frames[t], scale));
      d.targets.push_back(scale_frame(*pv.targets[t], scale));
    }
  }
  return d;
}

}  // namespace

TrainResult train_consistency(const PairedVideo& pv, const NetSpec& spec, const TrainConfig& cfg,
                              const TrainCallbacks& cb) {
  cfg.validate();
  spec.validate();
  pv.validate();
  if (!pv.fully_paired())
    throw DataError("consistency training needs a target for every frame");
  const int T = pv.inputs.length();
  if (spec.in_channels != pv.inputs.channels())
    throw ConfigError("net expects " + std::to_string(spec.in_channels) +
                      " input channels, video has " + std::to_string(pv.inputs.channels()));
  if (spec.out_channels != pv.targets[0]->channels)
    throw ConfigError("net emits " + std::to_string(spec.out_channels) +
                      " channels per head, targets have " +
                      std::to_string(pv.targets[0]->channels));
  if (cfg.irt && spec.heads != 2)
    throw ConfigError("reweighted training needs exactly 2 heads");
  if (!cfg.irt && spec.heads != 1)
    throw ConfigError("plain training drives exactly 1 head; enable irt for 2");
  if (cfg.irt && cfg.main_mode_frame >= T)
    throw ConfigError("main_mode_frame out of range");

  FeatureExtractor<float> feats;
  const FeatureExtractor<float>* fp = nullptr;
  if (cfg.loss == LossKind::kPerceptual) {
    feats = cfg.feature_weights.empty() ? FeatureExtractor<float>::make_default()
                                        : FeatureExtractor<float>::load(cfg.feature_weights);
    fp = &feats;
  }

  TrainResult res;
  if (!cfg.init_checkpoint.empty()) {
    res.net = load_checkpoint<float>(cfg.init_checkpoint);
    if (!same_arch(res.net.spec(), spec))
      throw ConfigError("init checkpoint architecture does not match the requested net");
  } else {
    res.net = Network<float>::build(spec);
  }
  Network<float>& net = res.net;
  auto& params = net.params();

  Adam<float> adam(cfg.learning_rate);
  Gradients<float> grads;
  Rng rng(cfg.seed);
  const int multiple = spec.size_multiple();

  // Runs one gradient step against frame t of the phase data; returns the
  // loss.  conf_override, when set, replaces the per-iteration confidence.
  auto step = [&](const PhaseData& data, int t, bool warmup_mode,
                  const Image<float>* conf_override) {
    PadInfo pad;
    Image<float> input = prep_input(data.inputs[t], multiple, &pad);
    Image<float> target = image_cast<float>(data.targets[t]);

    Tape<float> tape;
    std::vector<Image<float>> heads = net.forward(input, &tape);
    std::vector<Image<float>> head_grads(heads.size());
    double loss = 0.0;

    if (cfg.irt) {
      Image<float> main = crop_to(heads[0], pad.orig_h, pad.orig_w);
      Image<float> minor = crop_to(heads[1], pad.orig_h, pad.orig_w);
      if (warmup_mode) {
        // Main mode: both heads chase the same target, no reweighting.
        LossResult<float> lm = data_loss(main, target, cfg.loss, nullptr, fp,
                                         cfg.perceptual_weight);
        LossResult<float> ln = data_loss(minor, target, cfg.loss, nullptr, fp,
                                         cfg.perceptual_weight);
        loss = lm.value + ln.value;
        head_grads[0] = embed_grad(lm.grad, input.height, input.width);
        head_grads[1] = embed_grad(ln.grad, input.height, input.width);
      } else {
        Image<float> conf = conf_override
                                ? *conf_override
                                : compute_confidence(main, minor, target, cfg.delta);
        IrtResult<float> r =
            irt_loss(main, minor, target, conf, cfg.loss, fp, cfg.perceptual_weight);
        loss = r.value;
        head_grads[0] = embed_grad(r.grad_main, input.height, input.width);
        head_grads[1] = embed_grad(r.grad_minor, input.height, input.width);
      }
    } else {
      Image<float> main = crop_to(heads[0], pad.orig_h, pad.orig_w);
      LossResult<float> r = data_loss(main, target, cfg.loss, nullptr, fp,
                                      cfg.perceptual_weight);
      loss = r.value;
      head_grads[0] = embed_grad(r.grad, input.height, input.width);
    }

    if (!std::isfinite(loss))
      throw NumericError("training produced a non-finite loss on frame " + std::to_string(t));

    net.backward(tape, head_grads, &grads);
    for (size_t i = 0; i < params.size(); ++i) {
      adam.update(static_cast<int>(2 * i), params[i].w, grads.w[i]);
      adam.update(static_cast<int>(2 * i + 1), params[i].b, grads.b[i]);
    }
    ++res.iterations;
    return loss;
  };

  // Confidence snapshot for the per-epoch mode: inference only, no tape.
  auto epoch_confidence = [&](const PhaseData& data) {
    std::vector<Image<float>> conf(T);
    for (int t = 0; t < T; ++t) {
      PadInfo pad;
      Image<float> input = prep_input(data.inputs[t], multiple, &pad);
      std::vector<Image<float>> heads = net.forward(input);
      Image<float> main = crop_to(heads[0], pad.orig_h, pad.orig_w);
      Image<float> minor = crop_to(heads[1], pad.orig_h, pad.orig_w);
      conf[t] = compute_confidence(main, minor, image_cast<float>(data.targets[t]), cfg.delta);
    }
    return conf;
  };

  // Epoch schedule: an optional coarse phase first, then full resolution.
  struct Phase {
    double scale;
    int begin, end;
  };
  std::vector<Phase> phases;
  if (cfg.coarse_to_fine) {
    const int coarse = std::clamp((cfg.epochs * cfg.coarse_epoch_percent + 50) / 100, 0,
                                  cfg.epochs);
    if (coarse > 0) phases.push_back({cfg.coarse_scale, 0, coarse});
    if (coarse < cfg.epochs) phases.push_back({1.0, coarse, cfg.epochs});
  } else {
    phases.push_back({1.0, 0, cfg.epochs});
  }

  bool warmup_pending = cfg.irt && cfg.warmup_iterations > 0;
  bool stopped = false;
  std::vector<int> order(T);
  std::iota(order.begin(), order.end(), 0);

  for (const Phase& phase : phases) {
    if (stopped) break;
    PhaseData data = make_phase_data(pv, phase.scale);

    if (warmup_pending) {
      warmup_pending = false;
      for (int i = 0; i < cfg.warmup_iterations; ++i) {
        const double loss = step(data, cfg.main_mode_frame, /*warmup_mode=*/true, nullptr);
        if (cb.on_iteration)
          cb.on_iteration({-1, i, cfg.main_mode_frame, loss, /*warmup=*/true});
      }
    }

    for (int epoch = phase.begin; epoch < phase.end; ++epoch) {
      std::vector<Image<float>> conf_cache;
      if (cfg.irt && cfg.confidence_per_epoch) conf_cache = epoch_confidence(data);

      Rng epoch_rng = rng.fork(static_cast<uint64_t>(epoch));
      epoch_rng.shuffle(order);

      double sum = 0.0;
      for (int i = 0; i < T; ++i) {
        const int t = order[i];
        const double loss =
            step(data, t, /*warmup_mode=*/false, conf_cache.empty() ? nullptr : &conf_cache[t]);
        sum += loss;
        if (cb.on_iteration) cb.on_iteration({epoch, i, t, loss, /*warmup=*/false});
      }

      res.epoch_losses.push_back(sum / T);
      res.epochs_run = epoch + 1;
      if (cb.on_epoch) cb.on_epoch({epoch, sum / T, &net});

      if (cfg.auto_stop && auto_stop_check(res.epoch_losses, cfg.auto_stop_window,
                                           cfg.effective_auto_stop_threshold())) {
        res.stop = StopReason::kAutoStop;
        stopped = true;
        break;
      }
    }
  }

  return res;
}

Frame infer_frame(const Network<float>& net, const Frame& input) {
  if (input.channels != net.spec().in_channels)
    throw DataError("inference input has " + std::to_string(input.channels) +
                    " channels, net expects " + std::to_string(net.spec().in_channels));
  PadInfo pad;
  Image<float> x = prep_input(input, net.spec().size_multiple(), &pad);
  std::vector<Image<float>> heads = net.forward(x);
  Frame out = image_cast<double>(crop_to(heads[0], pad.orig_h, pad.orig_w));
  clamp01(out);
  return out;
}

InferenceResult infer_video(const Network<float>& net, const VideoSequence& inputs) {
  inputs.validate("inference input");
  if (inputs.channels() != net.spec().in_channels)
    throw DataError("inference input has " + std::to_string(inputs.channels()) +
                    " channels, net expects " + std::to_string(net.spec().in_channels));

  InferenceResult res;
  res.main.frame_rate = inputs.frame_rate;
  if (net.spec().heads > 1) {
    res.minor.emplace();
    res.minor->frame_rate = inputs.frame_rate;
  }

  const int multiple = net.spec().size_multiple();
  for (const Frame& f : inputs.frames) {
    PadInfo pad;
    Image<float> x = prep_input(f, multiple, &pad);
    std::vector<Image<float>> heads = net.forward(x);
    Frame main = image_cast<double>(crop_to(heads[0], pad.orig_h, pad.orig_w));
    clamp01(main);
    res.main.frames.push_back(std::move(main));
    if (res.minor) {
      Frame minor = image_cast<double>(crop_to(heads[1], pad.orig_h, pad.orig_w));
      clamp01(minor);
      res.minor->frames.push_back(std::move(minor));
    }
  }
  return res;
}

template Image<float> compute_confidence(const Image<float>&, const Image<float>&,
                                         const Image<float>&, double);
template Image<double> compute_confidence(const Image<double>&, const Image<double>&,
                                          const Image<double>&, double);
template IrtResult<float> irt_loss(const Image<float>&, const Image<float>&, const Image<float>&,
                                   const Image<float>&, LossKind, const FeatureExtractor<float>*,
                                   double);
template IrtResult<double> irt_loss(const Image<double>&, const Image<double>&,
                                    const Image<double>&, const Image<double>&, LossKind,
                                    const FeatureExtractor<double>*, double);

}  // namespace tempo
