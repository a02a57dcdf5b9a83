#include "tempo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace tempo::kernels {

namespace {

// Copies a CHW block into a zero-bordered (h+2)x(w+2) scratch so the conv
// inner loops need no bounds checks.  padded(c, y+1, x+1) == in(c, y, x).
template <typename T>
std::vector<T> pad_zero1(const T* in, int c, int h, int w) {
  const int ws = w + 2;
  const size_t pplane = static_cast<size_t>(h + 2) * ws;
  std::vector<T> pad(static_cast<size_t>(c) * pplane, T(0));
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    const T* src = in + static_cast<size_t>(ch) * h * w;
    T* dst = pad.data() + ch * pplane + ws + 1;
    for (int y = 0; y < h; ++y)
      std::memcpy(dst + static_cast<size_t>(y) * ws, src + static_cast<size_t>(y) * w,
                  sizeof(T) * w);
  }
  return pad;
}

template <typename T, typename I>
T clampv(T v, I lo, I hi) {
  return v < static_cast<T>(lo) ? static_cast<T>(lo) : (v > static_cast<T>(hi) ? static_cast<T>(hi) : v);
}

// Precomputed 1-D bilinear sampling table (half-pixel centers, edge clamp).
template <typename T>
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<T> f;  // weight of i1
  LerpAxis(int out_n, int in_n, double scale) : i0(out_n), i1(out_n), f(out_n) {
    for (int o = 0; o < out_n; ++o) {
      const double s = (o + 0.5) * scale - 0.5;
      double fl = std::floor(s);
      int lo = static_cast<int>(fl);
      T frac = static_cast<T>(s - fl);
      i0[o] = std::clamp(lo, 0, in_n - 1);
      i1[o] = std::clamp(lo + 1, 0, in_n - 1);
      f[o] = frac;
    }
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// conv3x3 and gradients

namespace {

// One (XBW output columns) x (OB output channels) register tile at (o0, y, x).
// Compile-time XBW keeps the accumulators in vector registers; OB output
// channels share the three input-row loads, which is where the speed over a
// single-output loop comes from.
template <typename T, int XBW, int OB>
void conv_tile(const T* pd, size_t pplane, int ws, int in_ch, const T* wt, const T* bias,
               int o0, int ob, int y, int x, int w, int h, T* out) {
  T acc[OB][XBW];
  for (int oo = 0; oo < ob; ++oo) {
    const T b = bias ? bias[o0 + oo] : T(0);
    for (int k = 0; k < XBW; ++k) acc[oo][k] = b;
  }
  for (int c = 0; c < in_ch; ++c) {
    const T* ip = pd + c * pplane + static_cast<size_t>(y) * ws + x;
    for (int dy = 0; dy < 3; ++dy) {
      const T* irow = ip + static_cast<size_t>(dy) * ws;
      for (int oo = 0; oo < ob; ++oo) {
        const T* wp = wt + (static_cast<size_t>(o0 + oo) * in_ch + c) * 9 + dy * 3;
        const T w0 = wp[0], w1 = wp[1], w2 = wp[2];
#pragma omp simd
        for (int k = 0; k < XBW; ++k)
          acc[oo][k] += w0 * irow[k] + w1 * irow[k + 1] + w2 * irow[k + 2];
      }
    }
  }
  for (int oo = 0; oo < ob; ++oo)
    std::memcpy(out + (static_cast<size_t>(o0 + oo) * h + y) * w + x, acc[oo], sizeof(T) * XBW);
}

// Same tile with a runtime column count (short rows and odd remainders).
template <typename T, int OB>
void conv_tile_n(const T* pd, size_t pplane, int ws, int in_ch, const T* wt, const T* bias,
                 int o0, int ob, int y, int x, int n, int w, int h, T* out) {
  constexpr int kMaxN = 15;
  T acc[OB][kMaxN];
  for (int oo = 0; oo < ob; ++oo) {
    const T b = bias ? bias[o0 + oo] : T(0);
    for (int k = 0; k < n; ++k) acc[oo][k] = b;
  }
  for (int c = 0; c < in_ch; ++c) {
    const T* ip = pd + c * pplane + static_cast<size_t>(y) * ws + x;
    for (int dy = 0; dy < 3; ++dy) {
      const T* irow = ip + static_cast<size_t>(dy) * ws;
      for (int oo = 0; oo < ob; ++oo) {
        const T* wp = wt + (static_cast<size_t>(o0 + oo) * in_ch + c) * 9 + dy * 3;
        const T w0 = wp[0], w1 = wp[1], w2 = wp[2];
#pragma omp simd
        for (int k = 0; k < n; ++k)
          acc[oo][k] += w0 * irow[k] + w1 * irow[k + 1] + w2 * irow[k + 2];
      }
    }
  }
  for (int oo = 0; oo < ob; ++oo)
    std::memcpy(out + (static_cast<size_t>(o0 + oo) * h + y) * w + x, acc[oo], sizeof(T) * n);
}

}  // namespace

template <typename T>
void conv3x3(const T* in, int in_ch, int h, int w, const T* wt, const T* bias, int out_ch,
             T* out) {
  const int ws = w + 2;
  const size_t pplane = static_cast<size_t>(h + 2) * ws;
  const std::vector<T> pad = pad_zero1(in, in_ch, h, w);
  const T* pd = pad.data();
  constexpr int OB = 4;
  const int oblocks = (out_ch + OB - 1) / OB;

#pragma omp parallel for collapse(2) schedule(static)
  for (int obi = 0; obi < oblocks; ++obi) {
    for (int y = 0; y < h; ++y) {
      const int o0 = obi * OB;
      const int ob = std::min(OB, out_ch - o0);
      int x = 0;
      for (; x + 16 <= w; x += 16)
        conv_tile<T, 16, OB>(pd, pplane, ws, in_ch, wt, bias, o0, ob, y, x, w, h, out);
      if (x + 8 <= w) {
        conv_tile<T, 8, OB>(pd, pplane, ws, in_ch, wt, bias, o0, ob, y, x, w, h, out);
        x += 8;
      }
      if (x + 4 <= w) {
        conv_tile<T, 4, OB>(pd, pplane, ws, in_ch, wt, bias, o0, ob, y, x, w, h, out);
        x += 4;
      }
      if (x < w)
        conv_tile_n<T, OB>(pd, pplane, ws, in_ch, wt, bias, o0, ob, y, x, w - x, w, h, out);
    }
  }
}

template <typename T>
void conv3x3_grad_input(const T* gout, int out_ch, int h, int w, const T* wt, int in_ch, T* gin) {
  // d in(c,Y,X) = sum_{o,dy,dx} wt[o][c][2-dy][2-dx] * gout(o, Y+dy-1, X+dx-1):
  // a conv3x3 of gout with flipped, (o,c)-transposed weights.
  std::vector<T> wflip(static_cast<size_t>(in_ch) * out_ch * 9);
  for (int o = 0; o < out_ch; ++o)
    for (int c = 0; c < in_ch; ++c)
      for (int k = 0; k < 9; ++k)
        wflip[(static_cast<size_t>(c) * out_ch + o) * 9 + k] =
            wt[(static_cast<size_t>(o) * in_ch + c) * 9 + (8 - k)];
  conv3x3(gout, out_ch, h, w, wflip.data(), static_cast<const T*>(nullptr), in_ch, gin);
}

template <typename T>
void conv3x3_grad_params(const T* in, int in_ch, const T* gout, int out_ch, int h, int w, T* gwt,
                         T* gbias) {
  // gwt[o][c,dy,dx] = sum_px gout(o, px) * patch(c*9 + dy*3 + dx, px), i.e. a
  // GEMM between gout and the im2col patch matrix.  The patch matrix is
  // materialized in pixel chunks small enough to stay cache-resident.
  const int ws = w + 2;
  const size_t pplane = static_cast<size_t>(h + 2) * ws;
  const std::vector<T> pad = pad_zero1(in, in_ch, h, w);
  const T* pd = pad.data();
  const int K = in_ch * 9;
  const int npx = h * w;

  std::fill(gwt, gwt + static_cast<size_t>(out_ch) * K, T(0));

  if (npx >= 128) {
    // Chunked 4x4-register-tile GEMM, vectors along the pixel axis.
    const int kChunk = 256;
    std::vector<T> patch(static_cast<size_t>(K) * kChunk);
    for (int px0 = 0; px0 < npx; px0 += kChunk) {
      const int ch = std::min(kChunk, npx - px0);
#pragma omp parallel for schedule(static)
      for (int k = 0; k < K; ++k) {
        const int c = k / 9, dy = (k % 9) / 3, dx = k % 3;
        T* prow = patch.data() + static_cast<size_t>(k) * kChunk;
        for (int i = 0; i < ch; ++i) {
          const int y = (px0 + i) / w, x = (px0 + i) % w;
          prow[i] = pd[c * pplane + static_cast<size_t>(y + dy) * ws + x + dx];
        }
      }
      const int oblocks = (out_ch + 3) / 4;
#pragma omp parallel for schedule(static)
      for (int obi = 0; obi < oblocks; ++obi) {
        const int o0 = obi * 4;
        const int ob = std::min(4, out_ch - o0);
        for (int k0 = 0; k0 < K; k0 += 4) {
          const int kb = std::min(4, K - k0);
          if (ob == 4 && kb == 4) {
            const T* g0 = gout + static_cast<size_t>(o0) * npx + px0;
            const T* g1 = g0 + npx;
            const T* g2 = g1 + npx;
            const T* g3 = g2 + npx;
            const T* p0 = patch.data() + static_cast<size_t>(k0) * kChunk;
            const T* p1 = p0 + kChunk;
            const T* p2 = p1 + kChunk;
            const T* p3 = p2 + kChunk;
            T a00 = 0, a01 = 0, a02 = 0, a03 = 0, a10 = 0, a11 = 0, a12 = 0, a13 = 0;
            T a20 = 0, a21 = 0, a22 = 0, a23 = 0, a30 = 0, a31 = 0, a32 = 0, a33 = 0;
#pragma omp simd reduction(+ : a00, a01, a02, a03, a10, a11, a12, a13, a20, a21, a22, a23, \
                               a30, a31, a32, a33)
            for (int i = 0; i < ch; ++i) {
              const T q0 = p0[i], q1 = p1[i], q2 = p2[i], q3 = p3[i];
              const T b0 = g0[i], b1 = g1[i], b2 = g2[i], b3 = g3[i];
              a00 += b0 * q0; a01 += b0 * q1; a02 += b0 * q2; a03 += b0 * q3;
              a10 += b1 * q0; a11 += b1 * q1; a12 += b1 * q2; a13 += b1 * q3;
              a20 += b2 * q0; a21 += b2 * q1; a22 += b2 * q2; a23 += b2 * q3;
              a30 += b3 * q0; a31 += b3 * q1; a32 += b3 * q2; a33 += b3 * q3;
            }
            T* g = gwt + (static_cast<size_t>(o0) * in_ch) * 9 + k0;
            g[0] += a00; g[1] += a01; g[2] += a02; g[3] += a03;
            g += K; g[0] += a10; g[1] += a11; g[2] += a12; g[3] += a13;
            g += K; g[0] += a20; g[1] += a21; g[2] += a22; g[3] += a23;
            g += K; g[0] += a30; g[1] += a31; g[2] += a32; g[3] += a33;
          } else {
            for (int oo = 0; oo < ob; ++oo) {
              const T* g = gout + static_cast<size_t>(o0 + oo) * npx + px0;
              for (int kk = 0; kk < kb; ++kk) {
                const T* p = patch.data() + static_cast<size_t>(k0 + kk) * kChunk;
                T s = T(0);
#pragma omp simd reduction(+ : s)
                for (int i = 0; i < ch; ++i) s += g[i] * p[i];
                gwt[(static_cast<size_t>(o0 + oo) * in_ch) * 9 + k0 + kk] += s;
              }
            }
          }
        }
      }
    }
  } else {
    // Few pixels, many channels: accumulate whole gwt rows with vectors along
    // the k axis, one broadcast gout value per pixel — no reductions needed.
    std::vector<T> patch(static_cast<size_t>(npx) * K);  // pixel-major
    for (int i = 0; i < npx; ++i) {
      const int y = i / w, x = i % w;
      T* prow = patch.data() + static_cast<size_t>(i) * K;
      for (int c = 0; c < in_ch; ++c) {
        const T* p = pd + c * pplane + static_cast<size_t>(y) * ws + x;
        for (int dy = 0; dy < 3; ++dy)
          for (int dx = 0; dx < 3; ++dx) prow[c * 9 + dy * 3 + dx] = p[dy * ws + dx];
      }
    }
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out_ch; ++o) {
      T* grow = gwt + static_cast<size_t>(o) * K;
      const T* g = gout + static_cast<size_t>(o) * npx;
      for (int i = 0; i < npx; ++i) {
        const T gv = g[i];
        const T* prow = patch.data() + static_cast<size_t>(i) * K;
#pragma omp simd
        for (int k = 0; k < K; ++k) grow[k] += gv * prow[k];
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int o = 0; o < out_ch; ++o) {
    T s = T(0);
    const T* g = gout + static_cast<size_t>(o) * h * w;
    const size_t n = static_cast<size_t>(h) * w;
#pragma omp simd reduction(+ : s)
    for (size_t i = 0; i < n; ++i) s += g[i];
    gbias[o] = s;
  }
}

// ---------------------------------------------------------------------------
// pointwise activations

template <typename T>
void leaky_relu(const T* in, size_t n, T slope, T* out) {
#pragma omp parallel for simd schedule(static)
  for (size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : slope * in[i];
}

template <typename T>
void leaky_relu_grad(const T* in, const T* gout, size_t n, T slope, T* gin) {
#pragma omp parallel for simd schedule(static)
  for (size_t i = 0; i < n; ++i) gin[i] = gout[i] * (in[i] > T(0) ? T(1) : slope);
}

template <typename T>
void sigmoid(const T* in, size_t n, T* out) {
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-in[i]));
}

template <typename T>
void sigmoid_grad(const T* out, const T* gout, size_t n, T* gin) {
#pragma omp parallel for simd schedule(static)
  for (size_t i = 0; i < n; ++i) gin[i] = gout[i] * out[i] * (T(1) - out[i]);
}

template <typename T>
void softmax_groups(const T* in, int groups, int group_size, int h, int w, T* out) {
  const size_t plane = static_cast<size_t>(h) * w;
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < plane; ++i) {
    for (int g = 0; g < groups; ++g) {
      const size_t base = static_cast<size_t>(g) * group_size * plane + i;
      T mx = in[base];
      for (int j = 1; j < group_size; ++j) mx = std::max(mx, in[base + j * plane]);
      T sum = T(0);
      for (int j = 0; j < group_size; ++j) {
        const T e = std::exp(in[base + j * plane] - mx);
        out[base + j * plane] = e;
        sum += e;
      }
      for (int j = 0; j < group_size; ++j) out[base + j * plane] /= sum;
    }
  }
}

template <typename T>
void softmax_groups_grad(const T* out, const T* gout, int groups, int group_size, int h, int w,
                         T* gin) {
  const size_t plane = static_cast<size_t>(h) * w;
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < plane; ++i) {
    for (int g = 0; g < groups; ++g) {
      const size_t base = static_cast<size_t>(g) * group_size * plane + i;
      T dot = T(0);
      for (int j = 0; j < group_size; ++j) dot += gout[base + j * plane] * out[base + j * plane];
      for (int j = 0; j < group_size; ++j)
        gin[base + j * plane] = out[base + j * plane] * (gout[base + j * plane] - dot);
    }
  }
}

// ---------------------------------------------------------------------------
// pooling / resampling

template <typename T>
void avgpool2(const T* in, int c, int h, int w, T* out) {
  const int oh = h / 2, ow = w / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      const T* r0 = in + (static_cast<size_t>(ch) * h + 2 * y) * w;
      const T* r1 = r0 + w;
      T* o = out + (static_cast<size_t>(ch) * oh + y) * ow;
#pragma omp simd
      for (int x = 0; x < ow; ++x)
        o[x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * T(0.25);
    }
  }
}

template <typename T>
void avgpool2_grad(const T* gout, int c, int h, int w, T* gin) {
  const int oh = h / 2, ow = w / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      const T* g = gout + (static_cast<size_t>(ch) * oh + y) * ow;
      T* r0 = gin + (static_cast<size_t>(ch) * h + 2 * y) * w;
      T* r1 = r0 + w;
      for (int x = 0; x < ow; ++x) {
        const T v = g[x] * T(0.25);
        r0[2 * x] = v;
        r0[2 * x + 1] = v;
        r1[2 * x] = v;
        r1[2 * x + 1] = v;
      }
    }
  }
}

template <typename T>
void upsample2(const T* in, int c, int h, int w, T* out) {
  const int oh = 2 * h, ow = 2 * w;
  const LerpAxis<T> ay(oh, h, 0.5), ax(ow, w, 0.5);
#pragma omp parallel for collapse(2) schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      const T* p0 = in + (static_cast<size_t>(ch) * h + ay.i0[y]) * w;
      const T* p1 = in + (static_cast<size_t>(ch) * h + ay.i1[y]) * w;
      const T fy = ay.f[y];
      T* o = out + (static_cast<size_t>(ch) * oh + y) * ow;
      for (int x = 0; x < ow; ++x) {
        const T fx = ax.f[x];
        const T top = p0[ax.i0[x]] * (T(1) - fx) + p0[ax.i1[x]] * fx;
        const T bot = p1[ax.i0[x]] * (T(1) - fx) + p1[ax.i1[x]] * fx;
        o[x] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
}

template <typename T>
void upsample2_grad(const T* gout, int c, int h, int w, T* gin) {
  // Exact transpose of upsample2: scatter each output gradient into the four
  // source cells with the forward weights.  Parallel over channels only so
  // each gin plane is written by a single thread.
  const int oh = 2 * h, ow = 2 * w;
  const LerpAxis<T> ay(oh, h, 0.5), ax(ow, w, 0.5);
  std::fill(gin, gin + static_cast<size_t>(c) * h * w, T(0));
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    T* gp = gin + static_cast<size_t>(ch) * h * w;
    for (int y = 0; y < oh; ++y) {
      const T fy = ay.f[y];
      const T* g = gout + (static_cast<size_t>(ch) * oh + y) * ow;
      T* r0 = gp + static_cast<size_t>(ay.i0[y]) * w;
      T* r1 = gp + static_cast<size_t>(ay.i1[y]) * w;
      for (int x = 0; x < ow; ++x) {
        const T fx = ax.f[x];
        const T v = g[x];
        r0[ax.i0[x]] += v * (T(1) - fy) * (T(1) - fx);
        r0[ax.i1[x]] += v * (T(1) - fy) * fx;
        r1[ax.i0[x]] += v * fy * (T(1) - fx);
        r1[ax.i1[x]] += v * fy * fx;
      }
    }
  }
}

template <typename T>
void resize_bilinear(const T* in, int c, int h, int w, int out_h, int out_w, T* out) {
  const LerpAxis<T> ay(out_h, h, static_cast<double>(h) / out_h);
  const LerpAxis<T> ax(out_w, w, static_cast<double>(w) / out_w);
#pragma omp parallel for collapse(2) schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < out_h; ++y) {
      const T* p0 = in + (static_cast<size_t>(ch) * h + ay.i0[y]) * w;
      const T* p1 = in + (static_cast<size_t>(ch) * h + ay.i1[y]) * w;
      const T fy = ay.f[y];
      T* o = out + (static_cast<size_t>(ch) * out_h + y) * out_w;
      for (int x = 0; x < out_w; ++x) {
        const T fx = ax.f[x];
        const T top = p0[ax.i0[x]] * (T(1) - fx) + p0[ax.i1[x]] * fx;
        const T bot = p1[ax.i0[x]] * (T(1) - fx) + p1[ax.i1[x]] * fx;
        o[x] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
}

template <typename T>
void warp_bilinear(const T* src, int c, int h, int w, const T* flow, T* out) {
  const size_t plane = static_cast<size_t>(h) * w;
  const T* fdx = flow;
  const T* fdy = flow + plane;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const T sx = x + fdx[i];
      const T sy = y + fdy[i];
      const T flx = std::floor(sx), fly = std::floor(sy);
      const T fx = sx - flx, fy = sy - fly;
      const int x0 = clampv(static_cast<int>(flx), 0, w - 1);
      const int x1 = clampv(static_cast<int>(flx) + 1, 0, w - 1);
      const int y0 = clampv(static_cast<int>(fly), 0, h - 1);
      const int y1 = clampv(static_cast<int>(fly) + 1, 0, h - 1);
      for (int ch = 0; ch < c; ++ch) {
        const T* p = src + ch * plane;
        const T top = p[static_cast<size_t>(y0) * w + x0] * (T(1) - fx) +
                      p[static_cast<size_t>(y0) * w + x1] * fx;
        const T bot = p[static_cast<size_t>(y1) * w + x0] * (T(1) - fx) +
                      p[static_cast<size_t>(y1) * w + x1] * fx;
        out[ch * plane + i] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// serial references: same contracts, written from the operation definitions
// rather than by removing pragmas, so the two routes are independent.

namespace serial {

template <typename T>
void conv3x3(const T* in, int in_ch, int h, int w, const T* wt, const T* bias, int out_ch,
             T* out) {
  for (int o = 0; o < out_ch; ++o) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        T acc = bias ? bias[o] : T(0);
        for (int c = 0; c < in_ch; ++c) {
          for (int dy = 0; dy < 3; ++dy) {
            const int sy = y + dy - 1;
            if (sy < 0 || sy >= h) continue;
            for (int dx = 0; dx < 3; ++dx) {
              const int sx = x + dx - 1;
              if (sx < 0 || sx >= w) continue;
              acc += wt[(static_cast<size_t>(o) * in_ch + c) * 9 + dy * 3 + dx] *
                     in[(static_cast<size_t>(c) * h + sy) * w + sx];
            }
          }
        }
        out[(static_cast<size_t>(o) * h + y) * w + x] = acc;
      }
    }
  }
}

template <typename T>
void conv3x3_grad_input(const T* gout, int out_ch, int h, int w, const T* wt, int in_ch, T* gin) {
  for (int c = 0; c < in_ch; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        T acc = T(0);
        for (int o = 0; o < out_ch; ++o) {
          for (int dy = 0; dy < 3; ++dy) {
            const int gy = y - dy + 1;
            if (gy < 0 || gy >= h) continue;
            for (int dx = 0; dx < 3; ++dx) {
              const int gx = x - dx + 1;
              if (gx < 0 || gx >= w) continue;
              acc += wt[(static_cast<size_t>(o) * in_ch + c) * 9 + dy * 3 + dx] *
                     gout[(static_cast<size_t>(o) * h + gy) * w + gx];
            }
          }
        }
        gin[(static_cast<size_t>(c) * h + y) * w + x] = acc;
      }
    }
  }
}

template <typename T>
void conv3x3_grad_params(const T* in, int in_ch, const T* gout, int out_ch, int h, int w, T* gwt,
                         T* gbias) {
  for (int o = 0; o < out_ch; ++o) {
    for (int c = 0; c < in_ch; ++c) {
      for (int dy = 0; dy < 3; ++dy) {
        for (int dx = 0; dx < 3; ++dx) {
          T s = T(0);
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy - 1;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < w; ++x) {
              const int sx = x + dx - 1;
              if (sx < 0 || sx >= w) continue;
              s += gout[(static_cast<size_t>(o) * h + y) * w + x] *
                   in[(static_cast<size_t>(c) * h + sy) * w + sx];
            }
          }
          gwt[(static_cast<size_t>(o) * in_ch + c) * 9 + dy * 3 + dx] = s;
        }
      }
    }
  }
  for (int o = 0; o < out_ch; ++o) {
    T s = T(0);
    for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i)
      s += gout[static_cast<size_t>(o) * h * w + i];
    gbias[o] = s;
  }
}

template <typename T>
void leaky_relu(const T* in, size_t n, T slope, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : slope * in[i];
}

template <typename T>
void leaky_relu_grad(const T* in, const T* gout, size_t n, T slope, T* gin) {
  for (size_t i = 0; i < n; ++i) gin[i] = gout[i] * (in[i] > T(0) ? T(1) : slope);
}

template <typename T>
void sigmoid(const T* in, size_t n, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-in[i]));
}

template <typename T>
void sigmoid_grad(const T* out, const T* gout, size_t n, T* gin) {
  for (size_t i = 0; i < n; ++i) gin[i] = gout[i] * out[i] * (T(1) - out[i]);
}

template <typename T>
void softmax_groups(const T* in, int groups, int group_size, int h, int w, T* out) {
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i) {
    for (int g = 0; g < groups; ++g) {
      const size_t base = static_cast<size_t>(g) * group_size * plane + i;
      T mx = in[base];
      for (int j = 1; j < group_size; ++j) mx = std::max(mx, in[base + j * plane]);
      T sum = T(0);
      for (int j = 0; j < group_size; ++j) sum += std::exp(in[base + j * plane] - mx);
      for (int j = 0; j < group_size; ++j) out[base + j * plane] = std::exp(in[base + j * plane] - mx) / sum;
    }
  }
}

template <typename T>
void softmax_groups_grad(const T* out, const T* gout, int groups, int group_size, int h, int w,
                         T* gin) {
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i) {
    for (int g = 0; g < groups; ++g) {
      const size_t base = static_cast<size_t>(g) * group_size * plane + i;
      T dot = T(0);
      for (int j = 0; j < group_size; ++j) dot += gout[base + j * plane] * out[base + j * plane];
      for (int j = 0; j < group_size; ++j)
        gin[base + j * plane] = out[base + j * plane] * (gout[base + j * plane] - dot);
    }
  }
}

template <typename T>
void avgpool2(const T* in, int c, int h, int w, T* out) {
  const int oh = h / 2, ow = w / 2;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        T s = T(0);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            s += in[(static_cast<size_t>(ch) * h + 2 * y + dy) * w + 2 * x + dx];
        out[(static_cast<size_t>(ch) * oh + y) * ow + x] = s / T(4);
      }
}

template <typename T>
void avgpool2_grad(const T* gout, int c, int h, int w, T* gin) {
  const int oh = h / 2, ow = w / 2;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            gin[(static_cast<size_t>(ch) * h + 2 * y + dy) * w + 2 * x + dx] =
                gout[(static_cast<size_t>(ch) * oh + y) * ow + x] / T(4);
}

namespace {
// Shared 1-D sample helper for the serial resamplers.
template <typename T>
void axis_sample(int o, int in_n, double scale, int* i0, int* i1, T* f) {
  const double s = (o + 0.5) * scale - 0.5;
  const double fl = std::floor(s);
  *f = static_cast<T>(s - fl);
  *i0 = std::clamp(static_cast<int>(fl), 0, in_n - 1);
  *i1 = std::clamp(static_cast<int>(fl) + 1, 0, in_n - 1);
}
}  // namespace

template <typename T>
void upsample2(const T* in, int c, int h, int w, T* out) {
  resize_bilinear(in, c, h, w, 2 * h, 2 * w, out);
}

template <typename T>
void upsample2_grad(const T* gout, int c, int h, int w, T* gin) {
  const int oh = 2 * h, ow = 2 * w;
  std::fill(gin, gin + static_cast<size_t>(c) * h * w, T(0));
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      int y0, y1;
      T fy;
      axis_sample(y, h, 0.5, &y0, &y1, &fy);
      for (int x = 0; x < ow; ++x) {
        int x0, x1;
        T fx;
        axis_sample(x, w, 0.5, &x0, &x1, &fx);
        const T v = gout[(static_cast<size_t>(ch) * oh + y) * ow + x];
        T* gp = gin + static_cast<size_t>(ch) * h * w;
        gp[static_cast<size_t>(y0) * w + x0] += v * (T(1) - fy) * (T(1) - fx);
        gp[static_cast<size_t>(y0) * w + x1] += v * (T(1) - fy) * fx;
        gp[static_cast<size_t>(y1) * w + x0] += v * fy * (T(1) - fx);
        gp[static_cast<size_t>(y1) * w + x1] += v * fy * fx;
      }
    }
  }
}

template <typename T>
void resize_bilinear(const T* in, int c, int h, int w, int out_h, int out_w, T* out) {
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < out_h; ++y) {
      int y0, y1;
      T fy;
      axis_sample(y, h, sy, &y0, &y1, &fy);
      for (int x = 0; x < out_w; ++x) {
        int x0, x1;
        T fx;
        axis_sample(x, w, sx, &x0, &x1, &fx);
        const T* p = in + static_cast<size_t>(ch) * h * w;
        const T top = p[static_cast<size_t>(y0) * w + x0] * (T(1) - fx) +
                      p[static_cast<size_t>(y0) * w + x1] * fx;
        const T bot = p[static_cast<size_t>(y1) * w + x0] * (T(1) - fx) +
                      p[static_cast<size_t>(y1) * w + x1] * fx;
        out[(static_cast<size_t>(ch) * out_h + y) * out_w + x] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
}

template <typename T>
void warp_bilinear(const T* src, int c, int h, int w, const T* flow, T* out) {
  const size_t plane = static_cast<size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const T sx = x + flow[i];
      const T sy = y + flow[plane + i];
      const T flx = std::floor(sx), fly = std::floor(sy);
      const T fx = sx - flx, fy = sy - fly;
      const int x0 = std::clamp(static_cast<int>(flx), 0, w - 1);
      const int x1 = std::clamp(static_cast<int>(flx) + 1, 0, w - 1);
      const int y0 = std::clamp(static_cast<int>(fly), 0, h - 1);
      const int y1 = std::clamp(static_cast<int>(fly) + 1, 0, h - 1);
      for (int ch = 0; ch < c; ++ch) {
        const T* p = src + ch * plane;
        const T top = p[static_cast<size_t>(y0) * w + x0] * (T(1) - fx) +
                      p[static_cast<size_t>(y0) * w + x1] * fx;
        const T bot = p[static_cast<size_t>(y1) * w + x0] * (T(1) - fx) +
                      p[static_cast<size_t>(y1) * w + x1] * fx;
        out[ch * plane + i] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
}

}  // namespace serial

}  // namespace tempo::kernels

// ---------------------------------------------------------------------------
// explicit instantiations (float for network activations, double for frames,
// metrics, and gradient checks)

#define TEMPO_INSTANTIATE_KERNELS(NS, T)                                                        \
  template void NS::conv3x3<T>(const T*, int, int, int, const T*, const T*, int, T*);          \
  template void NS::conv3x3_grad_input<T>(const T*, int, int, int, const T*, int, T*);         \
  template void NS::conv3x3_grad_params<T>(const T*, int, const T*, int, int, int, T*, T*);    \
  template void NS::leaky_relu<T>(const T*, size_t, T, T*);                                    \
  template void NS::leaky_relu_grad<T>(const T*, const T*, size_t, T, T*);                     \
  template void NS::sigmoid<T>(const T*, size_t, T*);                                          \
  template void NS::sigmoid_grad<T>(const T*, const T*, size_t, T*);                           \
  template void NS::softmax_groups<T>(const T*, int, int, int, int, T*);                       \
  template void NS::softmax_groups_grad<T>(const T*, const T*, int, int, int, int, T*);        \
  template void NS::avgpool2<T>(const T*, int, int, int, T*);                                  \
  template void NS::avgpool2_grad<T>(const T*, int, int, int, T*);                             \
  template void NS::upsample2<T>(const T*, int, int, int, T*);                                 \
  template void NS::upsample2_grad<T>(const T*, int, int, int, T*);                            \
  template void NS::resize_bilinear<T>(const T*, int, int, int, int, int, T*);                 \
  template void NS::warp_bilinear<T>(const T*, int, int, int, const T*, T*);

TEMPO_INSTANTIATE_KERNELS(tempo::kernels, float)
TEMPO_INSTANTIATE_KERNELS(tempo::kernels, double)
TEMPO_INSTANTIATE_KERNELS(tempo::kernels::serial, float)
TEMPO_INSTANTIATE_KERNELS(tempo::kernels::serial, double)

#undef TEMPO_INSTANTIATE_KERNELS
