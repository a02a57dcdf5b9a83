#pragma once

#include <cstddef>

// Low-level array kernels on planar (CHW) buffers.  tempo::kernels holds the
// OpenMP-parallel implementations used everywhere; tempo::kernels::serial
// holds straightforward single-threaded references with the same signatures,
// kept for correctness tests and the bench_kernels tool.
//
// Parallel kernels are written so every output element is produced entirely
// by one thread (no cross-thread reductions), which makes results bit-exact
// regardless of thread count.
//
// Conventions:
//  - conv3x3 weights are laid out [out_ch][in_ch][3][3]; borders use zero
//    padding ("same" output size).
//  - flow buffers hold two planes, dx then dy, in pixels, on the grid of the
//    frame being produced: out(c,y,x) = src(c, y + dy(y,x), x + dx(y,x)).
//  - resampling (resize, upsample, warp) is bilinear with half-pixel centers
//    and edge clamping.

namespace tempo::kernels {

template <typename T>
void conv3x3(const T* in, int in_ch, int h, int w, const T* wt, const T* bias, int out_ch, T* out);

// Gradient w.r.t. conv3x3 input.  Internally repacks the weights
// (flip + transpose) and reuses the forward kernel.
template <typename T>
void conv3x3_grad_input(const T* gout, int out_ch, int h, int w, const T* wt, int in_ch, T* gin);

// Gradients w.r.t. weights and bias; gwt/gbias are overwritten.
template <typename T>
void conv3x3_grad_params(const T* in, int in_ch, const T* gout, int out_ch, int h, int w, T* gwt,
                         T* gbias);

template <typename T>
void leaky_relu(const T* in, size_t n, T slope, T* out);

template <typename T>
void leaky_relu_grad(const T* in, const T* gout, size_t n, T slope, T* gin);

template <typename T>
void sigmoid(const T* in, size_t n, T* out);

// Takes the forward *output* (s = sigmoid(x)): gin = gout * s * (1 - s).
template <typename T>
void sigmoid_grad(const T* out, const T* gout, size_t n, T* gin);

// Per-pixel softmax over each contiguous block of group_size channels
// (groups * group_size channels total).
template <typename T>
void softmax_groups(const T* in, int groups, int group_size, int h, int w, T* out);

template <typename T>
void softmax_groups_grad(const T* out, const T* gout, int groups, int group_size, int h, int w,
                         T* gin);

// 2x2 mean pooling; h and w must be even.
template <typename T>
void avgpool2(const T* in, int c, int h, int w, T* out);

template <typename T>
void avgpool2_grad(const T* gout, int c, int h, int w, T* gin);

// Bilinear 2x upsampling from (h,w) to (2h,2w); grad is its exact transpose.
template <typename T>
void upsample2(const T* in, int c, int h, int w, T* out);

template <typename T>
void upsample2_grad(const T* gout, int c, int h, int w, T* gin);

template <typename T>
void resize_bilinear(const T* in, int c, int h, int w, int out_h, int out_w, T* out);

// Backward warp: pulls src through the displacement field on the output grid.
template <typename T>
void warp_bilinear(const T* src, int c, int h, int w, const T* flow, T* out);

namespace serial {

template <typename T>
void conv3x3(const T* in, int in_ch, int h, int w, const T* wt, const T* bias, int out_ch, T* out);

template <typename T>
void conv3x3_grad_input(const T* gout, int out_ch, int h, int w, const T* wt, int in_ch, T* gin);

template <typename T>
void conv3x3_grad_params(const T* in, int in_ch, const T* gout, int out_ch, int h, int w, T* gwt,
                         T* gbias);

template <typename T>
void leaky_relu(const T* in, size_t n, T slope, T* out);

template <typename T>
void leaky_relu_grad(const T* in, const T* gout, size_t n, T slope, T* gin);

template <typename T>
void sigmoid(const T* in, size_t n, T* out);

template <typename T>
void sigmoid_grad(const T* out, const T* gout, size_t n, T* gin);

template <typename T>
void softmax_groups(const T* in, int groups, int group_size, int h, int w, T* out);

template <typename T>
void softmax_groups_grad(const T* out, const T* gout, int groups, int group_size, int h, int w,
                         T* gin);

template <typename T>
void avgpool2(const T* in, int c, int h, int w, T* out);

template <typename T>
void avgpool2_grad(const T* gout, int c, int h, int w, T* gin);

template <typename T>
void upsample2(const T* in, int c, int h, int w, T* out);

template <typename T>
void upsample2_grad(const T* gout, int c, int h, int w, T* gin);

template <typename T>
void resize_bilinear(const T* in, int c, int h, int w, int out_h, int out_w, T* out);

template <typename T>
void warp_bilinear(const T* src, int c, int h, int w, const T* flow, T* out);

}  // namespace serial
}  // namespace tempo::kernels
