#pragma once

#include <string>
#include <type_traits>
#include <vector>

#include "tempo/image.hpp"
#include "tempo/net.hpp"

namespace tempo {

enum class LossKind { kL1, kL2, kPerceptual, kCrossEntropy };

LossKind loss_from_string(const std::string& s);
std::string to_string(LossKind k);

// Small fixed conv stack (3->16->32->64 with 2x pooling between stages) whose
// activations serve as the feature space of the perceptual loss.  Weights are
// loaded from a file produced by save(), or generated deterministically by
// make_default() (random projections work fine as a smoothness-aware
// distance for tests and demos).
template <typename T>
class FeatureExtractor {
 public:
  static FeatureExtractor make_default(uint64_t seed = 0x7ea7);
  static FeatureExtractor load(const std::string& path);
  void save(const std::string& path) const;

  struct Taps {
    Image<T> f1, f2, f3;  // full, half, quarter resolution
  };

  // Records intermediates needed by backward().
  struct Trace;
  Taps forward(const Image<T>& x, Trace* trace = nullptr) const;
  // Chains tap-space gradients back to the (3-channel) extractor input.
  Image<T> backward(const Trace& trace, const Taps& dtaps) const;

  const std::vector<ConvParam<T>>& convs() const { return convs_; }

 private:
  std::vector<ConvParam<T>> convs_;  // exactly three stages
};

template <typename T>
struct LossResult {
  double value = 0.0;
  Image<T> grad;  // d value / d pred, same shape as pred
};

// Masked weighted mean losses between pred and target (same shape).
//  - weight: optional single-channel map of non-negative per-pixel weights;
//    a zero total weight yields loss 0 with zero gradient.
//  - l1/l2 average over channels per pixel, then take the weighted mean.
//  - cross_entropy treats channels as a distribution: -sum_c t_c log p_c.
//  - perceptual adds mean absolute feature differences (computed on the
//    weight-multiplied images) to the masked pixel l1; it requires a
//    FeatureExtractor and 1- or 3-channel images.
// weight/features are non-deduced so call sites can pass a bare nullptr.
template <typename T>
LossResult<T> data_loss(const Image<T>& pred, const Image<T>& target, LossKind kind,
                        std::type_identity_t<const Image<T>*> weight = nullptr,
                        std::type_identity_t<const FeatureExtractor<T>*> features = nullptr,
                        double perceptual_weight = 1.0);

// Per-pixel channel-mean absolute difference: the distance both confidence
// estimation and the reweighted loss agree on.
template <typename T>
Image<T> pixel_distance(const Image<T>& a, const Image<T>& b);

}  // namespace tempo
