#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tempo/image.hpp"

namespace tempo {

enum class Backbone { kUNet, kResUNet, kFcn };
enum class FinalActivation { kSigmoid, kSoftmax, kNone };

Backbone backbone_from_string(const std::string& s);
FinalActivation activation_from_string(const std::string& s);
std::string to_string(Backbone b);
std::string to_string(FinalActivation a);

// Architecture description.  `heads` output images are produced side by
// side from one trunk (channels [0, out_channels) are head 0, the main head).
struct NetSpec {
  Backbone backbone = Backbone::kUNet;
  int depth = 4;          // encoder levels; input must be padded to 2^depth
  int base_channels = 32; // channels at the first level, doubled per level
  int heads = 1;
  int in_channels = 3;
  int out_channels = 3;   // per head
  FinalActivation final_activation = FinalActivation::kSigmoid;
  uint64_t rng_seed = 0;  // parameter init seed

  void validate() const;
  int size_multiple() const { return 1 << depth; }
  bool operator==(const NetSpec&) const = default;
};

template <typename T>
struct ConvParam {
  std::string name;
  int in_ch = 0, out_ch = 0;
  std::vector<T> w;  // [out_ch][in_ch][3][3]
  std::vector<T> b;  // [out_ch]
};

// Parameter gradients, aligned index-for-index with Network::params().
template <typename T>
struct Gradients {
  std::vector<std::vector<T>> w, b;

  template <typename P>
  void resize_like(const std::vector<ConvParam<P>>& params) {
    w.resize(params.size());
    b.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      w[i].assign(params[i].w.size(), T(0));
      b[i].assign(params[i].b.size(), T(0));
    }
  }
};

// Activations recorded during a forward pass, consumed by backward().
template <typename T>
struct Tape {
  Image<T> input;
  std::vector<Image<T>> slots;
};

template <typename T>
class Network {
 public:
  Network() = default;

  // Builds the graph and initializes parameters from spec.rng_seed with
  // fan-in-scaled uniform weights (zero biases).
  static Network build(const NetSpec& spec);

  const NetSpec& spec() const { return spec_; }
  std::vector<ConvParam<T>>& params() { return params_; }
  const std::vector<ConvParam<T>>& params() const { return params_; }
  size_t param_count() const;

  // Runs the net on an input whose H and W are multiples of
  // spec().size_multiple(); returns one image per head.  Pass a tape to
  // record activations for backward().
  std::vector<Image<T>> forward(const Image<T>& input, Tape<T>* tape = nullptr) const;

  // Fills `grads` (overwriting) with d(loss)/d(params) given the gradients
  // w.r.t. each head output.
  void backward(const Tape<T>& tape, const std::vector<Image<T>>& head_grads,
                Gradients<T>* grads) const;

  template <typename U>
  friend class Network;

  // Converts parameter precision (graph structure is rebuilt from the spec).
  template <typename U>
  Network<U> cast() const {
    Network<U> out = Network<U>::build(spec_);
    for (size_t i = 0; i < params_.size(); ++i) {
      for (size_t j = 0; j < params_[i].w.size(); ++j)
        out.params_[i].w[j] = static_cast<U>(params_[i].w[j]);
      for (size_t j = 0; j < params_[i].b.size(); ++j)
        out.params_[i].b[j] = static_cast<U>(params_[i].b[j]);
    }
    return out;
  }

 private:
  enum class OpKind { kConv, kLRelu, kPool, kUp, kConcat, kAdd, kSigmoid, kSoftmax };
  struct OpDef {
    OpKind kind;
    int param = -1;  // kConv: index into params_
    int src = -1;    // input slot (-1 = network input)
    int src2 = -1;   // kConcat/kAdd: second input slot
  };

  void build_graph();

  NetSpec spec_;
  std::vector<OpDef> ops_;
  std::vector<ConvParam<T>> params_;
};

// Checkpoint container: versioned binary file holding the spec and all named
// parameter arrays.  Round-trips bit-exactly for matching precision.
template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path);

template <typename T>
Network<T> load_checkpoint(const std::string& path);

// Pads H and W up to the next multiple of `multiple` by mirroring edge rows
// and columns (bottom/right).  crop_to undoes it after inference.
struct PadInfo {
  int orig_h = 0, orig_w = 0;
};

template <typename T>
Image<T> pad_to_multiple(const Image<T>& img, int multiple, PadInfo* info = nullptr);

template <typename T>
Image<T> crop_to(const Image<T>& img, int h, int w);

inline constexpr float kLeakySlope = 0.2f;

}  // namespace tempo
