#pragma once

#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "tempo/losses.hpp"
#include "tempo/net.hpp"
#include "tempo/video.hpp"

namespace tempo {

// Adam over slot-indexed flat arrays.  Moments are kept in double regardless
// of the parameter precision; each slot tracks its own step count.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void update(int slot, std::vector<T>& param, const std::vector<T>& grad);

  double learning_rate() const { return lr_; }

 private:
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  struct Slot {
    std::vector<double> m, v;
    long t = 0;
  };
  std::vector<Slot> slots_;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 1;  // contract: one frame pair per gradient step
  int epochs = 25;

  LossKind loss = LossKind::kL1;
  double perceptual_weight = 1.0;
  std::string feature_weights;  // extractor file; empty = built-in default

  // Reweighted dual-head training for multimodal processed inputs.
  bool irt = false;
  double delta = 0.02;         // confidence distance threshold
  int warmup_iterations = 50;  // main-mode steps on one frame before epoch 0
  int main_mode_frame = 0;
  bool confidence_per_epoch = false;  // default recomputes every iteration

  bool coarse_to_fine = false;
  double coarse_scale = 0.5;
  int coarse_epoch_percent = 50;  // share of epochs run at the coarse scale

  std::string init_checkpoint;  // warm start from a compatible checkpoint

  bool auto_stop = false;
  int auto_stop_window = 5;
  double auto_stop_threshold = 0.0;  // 0 = default for the loss kind

  uint64_t seed = 0;

  void validate() const;
  double effective_auto_stop_threshold() const;
};

enum class StopReason { kEpochBudget, kAutoStop };

struct EpochEvent {
  int epoch = 0;  // 0-based
  double mean_loss = 0.0;
  // Live handle for probing (inference snapshots, metric logging); only
  // valid during the callback.
  const Network<float>* net = nullptr;
};

struct IterationEvent {
  int epoch = 0;  // -1 during warm-up
  int index_in_epoch = 0;
  int frame = 0;
  double loss = 0.0;
  bool warmup = false;
};

struct TrainCallbacks {
  std::function<void(const EpochEvent&)> on_epoch;
  std::function<void(const IterationEvent&)> on_iteration;
};

struct TrainResult {
  Network<float> net;
  std::vector<double> epoch_losses;
  int epochs_run = 0;
  long iterations = 0;  // gradient steps incl. warm-up
  StopReason stop = StopReason::kEpochBudget;
};

// Test-time training against per-frame targets: every iteration fits one
// input->target pair, and temporal consistency emerges from the shared
// network rather than from any inter-frame loss.  Requires a fully paired
// video.
TrainResult train_consistency(const PairedVideo& pv, const NetSpec& spec, const TrainConfig& cfg,
                              const TrainCallbacks& cb = {});

// Binary per-pixel confidence: 1 where the main head is strictly closer to
// the target than max(minor distance, delta), using the channel-mean
// absolute distance.
template <typename T>
Image<T> compute_confidence(const Image<T>& main, const Image<T>& minor, const Image<T>& target,
                            double delta);

template <typename T>
struct IrtResult {
  double value = 0.0;
  Image<T> grad_main, grad_minor;
};

// Reweighted two-head loss: data_loss(main, target, confidence) +
// data_loss(minor, target, 1 - confidence).
template <typename T>
IrtResult<T> irt_loss(const Image<T>& main, const Image<T>& minor, const Image<T>& target,
                      const Image<T>& confidence, LossKind kind,
                      std::type_identity_t<const FeatureExtractor<T>*> features = nullptr,
                      double perceptual_weight = 1.0);

// True when the last `k` epoch losses, normalized by their maximum, have
// population variance below `threshold`.  Fewer than k entries: false.
bool auto_stop_check(const std::vector<double>& epoch_losses, int k, double threshold);

struct InferenceResult {
  VideoSequence main;
  std::optional<VideoSequence> minor;
};

// Runs the trained net on every frame (padding and cropping around the
// forward pass) and clamps outputs into frame range.
InferenceResult infer_video(const Network<float>& net, const VideoSequence& inputs);

// Single-frame inference (main head), same pad/crop handling.
Frame infer_frame(const Network<float>& net, const Frame& input);

}  // namespace tempo
