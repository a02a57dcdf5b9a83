#pragma once

#include <set>
#include <utility>
#include <vector>

#include "tempo/rng.hpp"
#include "tempo/trainer.hpp"
#include "tempo/video.hpp"

namespace tempo {

enum class AugmentKind { kCrop, kFlip, kRotate, kCopyPaste };
enum class PropagationTask { kColor, kStyle, kSegmentation };
enum class QueueSampling { kUniform, kRecency };

PropagationTask task_from_string(const std::string& s);
std::string to_string(PropagationTask t);

struct PropagationConfig {
  // Optimizer/loss settings reused from the trainer; epochs drive
  // reference-only training, auto-stop applies there too.  Reweighted and
  // coarse-to-fine modes are consistency-training features and are rejected
  // here.
  TrainConfig train;

  int k_iterations = 100;  // gradient steps per newly adopted frame
  std::set<AugmentKind> augmentation;
  int crop_h = 0, crop_w = 0;  // required when kCrop is enabled
  PropagationTask task = PropagationTask::kColor;
  QueueSampling sampling = QueueSampling::kUniform;
  bool reinfer_all = false;  // re-infer adopted frames at the end

  void validate() const;
};

// Training memory for progressive propagation: the reference pair first,
// then one pseudo-labeled pair per adopted frame, in adoption order.
struct QueueEntry {
  Frame input;
  Frame target;
  bool is_pseudo = false;
};

struct MemoryQueue {
  std::vector<QueueEntry> entries;
};

// Applies one identically-parameterized spatial transform chain to an
// input/target pair: optional 90-degree rotation, horizontal flip, random
// crop, and (segmentation only) copy-paste of the foreground to a random
// spot.
std::pair<Frame, Frame> augment(const Frame& input, const Frame& target,
                                const PropagationConfig& cfg, Rng& rng);

// Trains only on the reference pairs (seeded uniform sampling with
// augmentation, one pair per step); every other frame is untouched until
// inference.  An epoch is one iteration per reference.
TrainResult train_reference_only(const PairedVideo& pv, const NetSpec& spec,
                                 const PropagationConfig& cfg, const TrainCallbacks& cb = {});

struct PpplResult {
  // outputs[0] is a final-pass inference of the reference frame; later
  // frames hold the stored pseudo labels (or re-inferences with
  // reinfer_all).
  VideoSequence outputs;
  MemoryQueue queue;
  Network<float> net;
  long iterations = 0;
};

// Progressive propagation with pseudo labels: the queue starts with the
// reference pair, and each subsequent frame is adopted by training
// k_iterations on the queue, inferring that frame, and pushing the result
// as its training target.  Requires exactly one reference, at frame 0.
PpplResult propagate_pppl(const PairedVideo& pv, const NetSpec& spec,
                          const PropagationConfig& cfg, const TrainCallbacks& cb = {});

struct SegmentationResult {
  VideoSequence labels;  // class-probability maps per frame
  VideoSequence masks;   // 1-channel argmax class ids per frame
  MemoryQueue queue;
  Network<float> net;
};

// Segmentation propagation: softmax head + cross-entropy over normalized
// label maps, masks from the per-pixel argmax.
SegmentationResult propagate_segmentation(const PairedVideo& pv, const NetSpec& spec,
                                          const PropagationConfig& cfg,
                                          const TrainCallbacks& cb = {});

// Intersection-over-union of one class between two 1-channel id masks;
// both-empty counts as 1.
double mask_iou(const Image<double>& a, const Image<double>& b, int class_id);

}  // namespace tempo
