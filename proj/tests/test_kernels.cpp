#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "support/oracles.hpp"
#include "tempo/kernels.hpp"
#include "tempo/rng.hpp"

namespace k = tempo::kernels;
namespace ks = tempo::kernels::serial;
using oracle::dot;
using oracle::max_abs_diff;
using oracle::random_vec;

namespace {

struct ConvCase {
  int ic, oc, h, w;
};

const ConvCase kConvCases[] = {{1, 1, 8, 8}, {3, 8, 9, 13}, {5, 4, 16, 16}, {32, 32, 20, 24}};

template <typename T>
void check_conv_matches_serial(double tol) {
  for (const auto& cc : kConvCases) {
    tempo::Rng rng(77 + cc.ic + cc.h);
    const auto in = random_vec<T>(static_cast<size_t>(cc.ic) * cc.h * cc.w, rng);
    const auto wt = random_vec<T>(static_cast<size_t>(cc.oc) * cc.ic * 9, rng);
    const auto bias = random_vec<T>(cc.oc, rng);
    std::vector<T> out_p(static_cast<size_t>(cc.oc) * cc.h * cc.w);
    std::vector<T> out_s(out_p.size());
    k::conv3x3(in.data(), cc.ic, cc.h, cc.w, wt.data(), bias.data(), cc.oc, out_p.data());
    ks::conv3x3(in.data(), cc.ic, cc.h, cc.w, wt.data(), bias.data(), cc.oc, out_s.data());
    CAPTURE(cc.ic);
    CAPTURE(cc.h);
    CHECK(max_abs_diff(out_p, out_s) < tol);
  }
}

}  // namespace

TEST_CASE("conv3x3 matches the serial reference (float and double)") {
  check_conv_matches_serial<float>(5e-4);
  check_conv_matches_serial<double>(1e-9);
}

TEST_CASE("conv3x3 hand-computed values with zero padding") {
  // one channel, 3x3 image, identity-free weights
  const std::vector<double> in = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> wt(9, 0.0);
  wt[4] = 2.0;  // center tap
  wt[0] = 1.0;  // top-left tap
  const double bias = 0.5;
  std::vector<double> out(9);
  k::conv3x3(in.data(), 1, 3, 3, wt.data(), &bias, 1, out.data());
  // center pixel (1,1): 2*5 + 1*in(0,0) = 10 + 1 = 11 (+bias)
  CHECK(out[4] == doctest::Approx(11.5));
  // corner (0,0): top-left tap reads the zero border: 2*1 + 0 = 2 (+bias)
  CHECK(out[0] == doctest::Approx(2.5));
  // corner (2,2): 2*9 + 1*in(1,1) = 18 + 5 = 23 (+bias)
  CHECK(out[8] == doctest::Approx(23.5));
}

TEST_CASE("conv3x3 gradients satisfy the adjoint identity") {
  // conv is linear in the input (bias 0) and in the params, so
  // <conv(x), g> == <x, grad_input(g)> and == <W, grad_W> + <b, grad_b>.
  for (const auto& cc : kConvCases) {
    tempo::Rng rng(123 + cc.oc);
    const auto x = random_vec<double>(static_cast<size_t>(cc.ic) * cc.h * cc.w, rng);
    const auto wt = random_vec<double>(static_cast<size_t>(cc.oc) * cc.ic * 9, rng);
    const auto bias = random_vec<double>(cc.oc, rng);
    const auto g = random_vec<double>(static_cast<size_t>(cc.oc) * cc.h * cc.w, rng);

    std::vector<double> ax(g.size());
    k::conv3x3(x.data(), cc.ic, cc.h, cc.w, wt.data(), static_cast<const double*>(nullptr), cc.oc,
               ax.data());
    std::vector<double> atg(x.size());
    k::conv3x3_grad_input(g.data(), cc.oc, cc.h, cc.w, wt.data(), cc.ic, atg.data());
    CHECK(dot(ax, g) == doctest::Approx(dot(x, atg)).epsilon(1e-10));

    std::vector<double> axb(g.size());
    k::conv3x3(x.data(), cc.ic, cc.h, cc.w, wt.data(), bias.data(), cc.oc, axb.data());
    std::vector<double> gw(wt.size()), gb(bias.size());
    k::conv3x3_grad_params(x.data(), cc.ic, g.data(), cc.oc, cc.h, cc.w, gw.data(), gb.data());
    CHECK(dot(axb, g) == doctest::Approx(dot(wt, gw) + dot(bias, gb)).epsilon(1e-10));
  }
}

TEST_CASE("conv3x3 gradient kernels match their serial references") {
  for (const auto& cc : kConvCases) {
    tempo::Rng rng(9 + cc.w);
    const auto x = random_vec<double>(static_cast<size_t>(cc.ic) * cc.h * cc.w, rng);
    const auto wt = random_vec<double>(static_cast<size_t>(cc.oc) * cc.ic * 9, rng);
    const auto g = random_vec<double>(static_cast<size_t>(cc.oc) * cc.h * cc.w, rng);

    std::vector<double> gi_p(x.size()), gi_s(x.size());
    k::conv3x3_grad_input(g.data(), cc.oc, cc.h, cc.w, wt.data(), cc.ic, gi_p.data());
    ks::conv3x3_grad_input(g.data(), cc.oc, cc.h, cc.w, wt.data(), cc.ic, gi_s.data());
    CHECK(max_abs_diff(gi_p, gi_s) < 1e-9);

    std::vector<double> gw_p(wt.size()), gb_p(cc.oc), gw_s(wt.size()), gb_s(cc.oc);
    k::conv3x3_grad_params(x.data(), cc.ic, g.data(), cc.oc, cc.h, cc.w, gw_p.data(), gb_p.data());
    ks::conv3x3_grad_params(x.data(), cc.ic, g.data(), cc.oc, cc.h, cc.w, gw_s.data(),
                            gb_s.data());
    CHECK(max_abs_diff(gw_p, gw_s) < 1e-9);
    CHECK(max_abs_diff(gb_p, gb_s) < 1e-9);
  }
}

TEST_CASE("activation gradients agree with finite differences") {
  tempo::Rng rng(5);
  const size_t n = 64;
  const auto x = random_vec<double>(n, rng, -2.0, 2.0);
  const auto g = random_vec<double>(n, rng);
  const double h = 1e-6;

  SUBCASE("leaky_relu") {
    std::vector<double> gin(n);
    k::leaky_relu_grad(x.data(), g.data(), n, 0.2, gin.data());
    for (size_t i = 0; i < n; ++i) {
      if (std::abs(x[i]) < 1e-4) continue;  // kink
      auto xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      std::vector<double> op(n), om(n);
      k::leaky_relu(xp.data(), n, 0.2, op.data());
      k::leaky_relu(xm.data(), n, 0.2, om.data());
      const double fd = (dot(op, g) - dot(om, g)) / (2 * h);
      CHECK(gin[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  }

  SUBCASE("sigmoid") {
    std::vector<double> s(n), gin(n);
    k::sigmoid(x.data(), n, s.data());
    k::sigmoid_grad(s.data(), g.data(), n, gin.data());
    for (size_t i = 0; i < n; i += 7) {
      auto xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      std::vector<double> op(n), om(n);
      k::sigmoid(xp.data(), n, op.data());
      k::sigmoid(xm.data(), n, om.data());
      const double fd = (dot(op, g) - dot(om, g)) / (2 * h);
      CHECK(gin[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("softmax_groups normalizes per pixel per group and matches serial") {
  const int groups = 2, gs = 3, h = 6, w = 5;
  tempo::Rng rng(11);
  const auto x = random_vec<double>(static_cast<size_t>(groups) * gs * h * w, rng, -3.0, 3.0);
  std::vector<double> out(x.size()), out_s(x.size());
  k::softmax_groups(x.data(), groups, gs, h, w, out.data());
  ks::softmax_groups(x.data(), groups, gs, h, w, out_s.data());
  CHECK(max_abs_diff(out, out_s) < 1e-12);

  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i)
    for (int g = 0; g < groups; ++g) {
      double s = 0.0;
      for (int j = 0; j < gs; ++j) s += out[(static_cast<size_t>(g) * gs + j) * plane + i];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

  SUBCASE("gradient matches finite differences") {
    tempo::Rng rng2(12);
    const auto g = random_vec<double>(x.size(), rng2);
    std::vector<double> gin(x.size());
    k::softmax_groups_grad(out.data(), g.data(), groups, gs, h, w, gin.data());
    const double hh = 1e-6;
    for (size_t i = 0; i < x.size(); i += 23) {
      auto xp = x, xm = x;
      xp[i] += hh;
      xm[i] -= hh;
      std::vector<double> op(x.size()), om(x.size());
      k::softmax_groups(xp.data(), groups, gs, h, w, op.data());
      k::softmax_groups(xm.data(), groups, gs, h, w, om.data());
      const double fd = (dot(op, g) - dot(om, g)) / (2 * hh);
      CHECK(gin[i] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("avgpool2 and upsample2 match serial and satisfy adjoint identities") {
  const int c = 3, h = 12, w = 10;
  tempo::Rng rng(21);
  const auto x = random_vec<double>(static_cast<size_t>(c) * h * w, rng);

  std::vector<double> pooled(static_cast<size_t>(c) * (h / 2) * (w / 2));
  std::vector<double> pooled_s(pooled.size());
  k::avgpool2(x.data(), c, h, w, pooled.data());
  ks::avgpool2(x.data(), c, h, w, pooled_s.data());
  CHECK(max_abs_diff(pooled, pooled_s) < 1e-12);

  const auto gp = random_vec<double>(pooled.size(), rng);
  std::vector<double> gx(x.size());
  k::avgpool2_grad(gp.data(), c, h, w, gx.data());
  CHECK(dot(pooled, gp) == doctest::Approx(dot(x, gx)).epsilon(1e-12));

  std::vector<double> up(static_cast<size_t>(c) * 2 * h * 2 * w), up_s(up.size());
  k::upsample2(x.data(), c, h, w, up.data());
  ks::upsample2(x.data(), c, h, w, up_s.data());
  CHECK(max_abs_diff(up, up_s) < 1e-12);

  const auto gu = random_vec<double>(up.size(), rng);
  std::vector<double> gxu(x.size()), gxu_s(x.size());
  k::upsample2_grad(gu.data(), c, h, w, gxu.data());
  ks::upsample2_grad(gu.data(), c, h, w, gxu_s.data());
  CHECK(max_abs_diff(gxu, gxu_s) < 1e-12);
  CHECK(dot(up, gu) == doctest::Approx(dot(x, gxu)).epsilon(1e-12));
}

TEST_CASE("upsample2 of a constant plane is constant") {
  const int c = 1, h = 8, w = 8;
  std::vector<double> x(static_cast<size_t>(h) * w, 0.37);
  std::vector<double> up(static_cast<size_t>(4) * h * w);
  k::upsample2(x.data(), c, h, w, up.data());
  for (double v : up) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
}

TEST_CASE("resize_bilinear identity, hand values, and serial agreement") {
  const int c = 2, h = 11, w = 9;
  tempo::Rng rng(31);
  const auto x = random_vec<double>(static_cast<size_t>(c) * h * w, rng);

  SUBCASE("same size is bit-exact identity") {
    std::vector<double> out(x.size());
    k::resize_bilinear(x.data(), c, h, w, h, w, out.data());
    CHECK(max_abs_diff(out, x) == 0.0);
  }

  SUBCASE("1-D hand case") {
    const std::vector<double> row = {0, 1, 2, 3};
    std::vector<double> out(2);
    k::resize_bilinear(row.data(), 1, 1, 4, 1, 2, out.data());
    // output centers land at source coords 0.5 and 2.5
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(2.5));
  }

  SUBCASE("arbitrary scale matches serial") {
    std::vector<double> a(static_cast<size_t>(c) * 7 * 15), b(a.size());
    k::resize_bilinear(x.data(), c, h, w, 7, 15, a.data());
    ks::resize_bilinear(x.data(), c, h, w, 7, 15, b.data());
    CHECK(max_abs_diff(a, b) < 1e-12);
  }
}

TEST_CASE("warp_bilinear zero flow is identity; integer flow shifts with clamping") {
  const int c = 3, h = 10, w = 12;
  tempo::Rng rng(41);
  const auto x = random_vec<double>(static_cast<size_t>(c) * h * w, rng, 0.0, 1.0);
  const size_t plane = static_cast<size_t>(h) * w;

  SUBCASE("zero flow") {
    std::vector<double> flow(2 * plane, 0.0), out(x.size());
    k::warp_bilinear(x.data(), c, h, w, flow.data(), out.data());
    CHECK(max_abs_diff(out, x) == 0.0);
  }

  SUBCASE("dx=+1 pulls the pixel to the right") {
    std::vector<double> flow(2 * plane, 0.0), out(x.size());
    for (size_t i = 0; i < plane; ++i) flow[i] = 1.0;
    k::warp_bilinear(x.data(), c, h, w, flow.data(), out.data());
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const int sx = std::min(xx + 1, w - 1);
          CHECK(out[ch * plane + y * w + xx] ==
                doctest::Approx(x[ch * plane + y * w + sx]).epsilon(1e-15));
        }
  }

  SUBCASE("fractional flow averages neighbors") {
    std::vector<double> flow(2 * plane, 0.0), out(x.size());
    for (size_t i = 0; i < plane; ++i) flow[plane + i] = 0.5;  // dy
    k::warp_bilinear(x.data(), c, h, w, flow.data(), out.data());
    // interior row: mean of rows y and y+1
    const int y = 4, xx = 5, ch = 1;
    const double expect = 0.5 * (x[ch * plane + y * w + xx] + x[ch * plane + (y + 1) * w + xx]);
    CHECK(out[ch * plane + y * w + xx] == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("matches serial on random flow") {
    tempo::Rng r2(42);
    auto flow = random_vec<double>(2 * plane, r2, -3.0, 3.0);
    std::vector<double> a(x.size()), b(x.size());
    k::warp_bilinear(x.data(), c, h, w, flow.data(), a.data());
    ks::warp_bilinear(x.data(), c, h, w, flow.data(), b.data());
    CHECK(max_abs_diff(a, b) < 1e-12);
  }
}

TEST_CASE("kernels are deterministic across repeated calls") {
  const int ic = 16, oc = 16, h = 24, w = 24;
  tempo::Rng rng(51);
  const auto in = random_vec<float>(static_cast<size_t>(ic) * h * w, rng);
  const auto wt = random_vec<float>(static_cast<size_t>(oc) * ic * 9, rng);
  const auto bias = random_vec<float>(oc, rng);
  std::vector<float> a(static_cast<size_t>(oc) * h * w), b(a.size());
  k::conv3x3(in.data(), ic, h, w, wt.data(), bias.data(), oc, a.data());
  k::conv3x3(in.data(), ic, h, w, wt.data(), bias.data(), oc, b.data());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}
