#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <fstream>
#include <set>

#include "doctest.h"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "tempo/errors.hpp"
#include "tempo/net.hpp"
#include "tempo/rng.hpp"

using tempo::Backbone;
using tempo::FinalActivation;
using tempo::Image;
using tempo::NetSpec;
using tempo::Network;

namespace {

template <typename T>
Image<T> random_input(int c, int h, int w, uint64_t seed) {
  tempo::Rng rng(seed);
  Image<T> img(c, h, w);
  for (auto& v : img.data) v = static_cast<T>(rng.uniform());
  return img;
}

NetSpec small_spec(Backbone b, int heads, FinalActivation act = FinalActivation::kSigmoid) {
  NetSpec s;
  s.backbone = b;
  s.depth = 2;
  s.base_channels = 4;
  s.heads = heads;
  s.in_channels = 3;
  s.out_channels = 3;
  s.final_activation = act;
  s.rng_seed = 42;
  return s;
}

}  // namespace

TEST_CASE("forward produces input-sized outputs for every backbone and head count") {
  for (Backbone b : {Backbone::kUNet, Backbone::kResUNet, Backbone::kFcn}) {
    for (int heads : {1, 2}) {
      const NetSpec spec = small_spec(b, heads);
      auto net = Network<float>::build(spec);
      const auto input = random_input<float>(3, 16, 24, 7);
      const auto out = net.forward(input);
      REQUIRE(static_cast<int>(out.size()) == heads);
      for (const auto& o : out) {
        CHECK(o.channels == 3);
        CHECK(o.height == 16);
        CHECK(o.width == 24);
        for (float v : o.data) {
          CHECK(v >= 0.0f);  // sigmoid range
          CHECK(v <= 1.0f);
        }
      }
      CHECK(net.param_count() > 0);
    }
  }
}

TEST_CASE("parameter names are unique and the seed fixes them exactly") {
  const NetSpec spec = small_spec(Backbone::kUNet, 2);
  auto a = Network<float>::build(spec);
  auto b = Network<float>::build(spec);

  std::set<std::string> names;
  for (const auto& p : a.params()) names.insert(p.name);
  CHECK(names.size() == a.params().size());

  for (size_t i = 0; i < a.params().size(); ++i)
    CHECK(std::memcmp(a.params()[i].w.data(), b.params()[i].w.data(),
                      a.params()[i].w.size() * sizeof(float)) == 0);

  NetSpec other = spec;
  other.rng_seed = 43;
  auto c = Network<float>::build(other);
  CHECK(std::memcmp(a.params()[0].w.data(), c.params()[0].w.data(),
                    a.params()[0].w.size() * sizeof(float)) != 0);

  const auto input = random_input<float>(3, 16, 16, 9);
  const auto o1 = a.forward(input);
  const auto o2 = b.forward(input);
  CHECK(std::memcmp(o1[0].data.data(), o2[0].data.data(), o1[0].data.size() * sizeof(float)) ==
        0);
}

TEST_CASE("forward validates input channels and padding") {
  auto net = Network<float>::build(small_spec(Backbone::kUNet, 1));
  CHECK_THROWS_AS(net.forward(random_input<float>(1, 16, 16, 1)), tempo::DataError);
  CHECK_THROWS_AS(net.forward(random_input<float>(3, 18, 16, 1)), tempo::DataError);
}

TEST_CASE("softmax heads produce per-pixel distributions per head") {
  NetSpec spec = small_spec(Backbone::kUNet, 2, FinalActivation::kSoftmax);
  spec.out_channels = 4;
  auto net = Network<float>::build(spec);
  const auto out = net.forward(random_input<float>(3, 8, 8, 3));
  for (const auto& head : out)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        float s = 0.0f;
        for (int c = 0; c < 4; ++c) s += head.at(c, y, x);
        CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
      }
}

TEST_CASE("checkpoints round-trip bit-exactly and reject corruption") {
  fixtures::TempDir dir("ckpt");
  const NetSpec spec = small_spec(Backbone::kResUNet, 2);
  auto net = Network<float>::build(spec);
  // make parameters non-initial so the round-trip is meaningful
  for (auto& p : net.params())
    for (auto& b : p.b) b = 0.01f;

  const std::string path = dir.sub("net.ckpt");
  tempo::save_checkpoint(net, path);
  auto back = tempo::load_checkpoint<float>(path);
  CHECK(back.spec() == spec);
  for (size_t i = 0; i < net.params().size(); ++i) {
    CHECK(std::memcmp(net.params()[i].w.data(), back.params()[i].w.data(),
                      net.params()[i].w.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(net.params()[i].b.data(), back.params()[i].b.data(),
                      net.params()[i].b.size() * sizeof(float)) == 0);
  }

  SUBCASE("wrong magic") {
    std::ofstream(dir.sub("junk.ckpt"), std::ios::binary) << "not a checkpoint at all";
    CHECK_THROWS_AS(tempo::load_checkpoint<float>(dir.sub("junk.ckpt")), tempo::DataError);
  }

  SUBCASE("truncated file") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir.sub("trunc.ckpt"), std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    CHECK_THROWS_AS(tempo::load_checkpoint<float>(dir.sub("trunc.ckpt")), tempo::DataError);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(tempo::load_checkpoint<float>(dir.sub("nope.ckpt")), tempo::DataError);
  }

  SUBCASE("precision conversion preserves values") {
    auto dnet = tempo::load_checkpoint<double>(path);
    for (size_t i = 0; i < net.params().size(); ++i)
      for (size_t j = 0; j < net.params()[i].w.size(); ++j)
        CHECK(dnet.params()[i].w[j] == static_cast<double>(net.params()[i].w[j]));
  }
}

TEST_CASE("pad_to_multiple mirrors edges and crop_to undoes it") {
  Image<double> img(1, 8, 10);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 10; ++x) img.at(0, y, x) = y * 100 + x;

  tempo::PadInfo info;
  const auto padded = tempo::pad_to_multiple(img, 16, &info);
  CHECK(padded.height == 16);
  CHECK(padded.width == 16);
  CHECK(info.orig_h == 8);
  CHECK(info.orig_w == 10);
  // first padded row mirrors the last real row
  CHECK(padded.at(0, 8, 0) == img.at(0, 7, 0));
  CHECK(padded.at(0, 9, 0) == img.at(0, 6, 0));
  // first padded column mirrors the last real column
  CHECK(padded.at(0, 0, 10) == img.at(0, 0, 9));
  CHECK(padded.at(0, 0, 11) == img.at(0, 0, 8));

  const auto cropped = tempo::crop_to(padded, 8, 10);
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(cropped.data[i] == img.data[i]);

  SUBCASE("already aligned passes through unchanged") {
    Image<double> ok(2, 16, 32, 0.5);
    const auto same = tempo::pad_to_multiple(ok, 16);
    CHECK(same.height == 16);
    CHECK(same.width == 32);
  }
}

TEST_CASE("backward gradients match finite differences for every backbone") {
  // double precision end-to-end; the loss is a fixed random linear functional
  // of the head outputs, so backward() returns its exact parameter gradient.
  for (Backbone b : {Backbone::kUNet, Backbone::kResUNet, Backbone::kFcn}) {
    CAPTURE(static_cast<int>(b));
    NetSpec spec = small_spec(b, 2);
    spec.base_channels = 2;
    spec.rng_seed = 11;
    auto net = Network<double>::build(spec);
    const auto input = random_input<double>(3, 8, 8, 21);

    tempo::Rng grng(31);
    std::vector<Image<double>> gheads;
    for (int h = 0; h < spec.heads; ++h) {
      Image<double> g(spec.out_channels, 8, 8);
      for (auto& v : g.data) v = grng.uniform(-1.0, 1.0);
      gheads.push_back(std::move(g));
    }
    auto loss_of = [&](Network<double>& n) {
      const auto heads = n.forward(input);
      double s = 0.0;
      for (size_t h = 0; h < heads.size(); ++h)
        for (size_t i = 0; i < heads[h].data.size(); ++i)
          s += gheads[h].data[i] * heads[h].data[i];
      return s;
    };

    tempo::Tape<double> tape;
    net.forward(input, &tape);
    tempo::Gradients<double> grads;
    net.backward(tape, gheads, &grads);

    // probe a spread of parameters in every array
    tempo::Rng pick(99);
    const double h = 1e-6;
    for (size_t pi = 0; pi < net.params().size(); ++pi) {
      auto& pw = net.params()[pi].w;
      for (int probe = 0; probe < 2; ++probe) {
        const size_t j = static_cast<size_t>(pick.uniform_int(static_cast<int>(pw.size())));
        const double orig = pw[j];
        pw[j] = orig + h;
        const double lp = loss_of(net);
        pw[j] = orig - h;
        const double lm = loss_of(net);
        pw[j] = orig;
        const double fd = (lp - lm) / (2 * h);
        const double an = grads.w[pi][j];
        CAPTURE(net.params()[pi].name);
        CHECK(an == doctest::Approx(fd).epsilon(1e-4));
      }
      // one bias probe per conv
      auto& pb = net.params()[pi].b;
      const size_t j = static_cast<size_t>(pick.uniform_int(static_cast<int>(pb.size())));
      const double orig = pb[j];
      pb[j] = orig + h;
      const double lp = loss_of(net);
      pb[j] = orig - h;
      const double lm = loss_of(net);
      pb[j] = orig;
      CHECK(grads.b[pi][j] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-4));
    }
  }
}

TEST_CASE("precision cast keeps parameter values") {
  auto net = Network<float>::build(small_spec(Backbone::kUNet, 1));
  auto dnet = net.cast<double>();
  for (size_t i = 0; i < net.params().size(); ++i)
    for (size_t j = 0; j < net.params()[i].w.size(); ++j)
      CHECK(dnet.params()[i].w[j] == static_cast<double>(net.params()[i].w[j]));
}

TEST_CASE("spec validation rejects out-of-range values") {
  NetSpec s = small_spec(Backbone::kUNet, 1);
  s.depth = 0;
  CHECK_THROWS_AS(s.validate(), tempo::ConfigError);
  s = small_spec(Backbone::kUNet, 1);
  s.heads = 3;
  CHECK_THROWS_AS(s.validate(), tempo::ConfigError);
  s = small_spec(Backbone::kUNet, 1);
  s.in_channels = 2;
  CHECK_THROWS_AS(s.validate(), tempo::ConfigError);
  s = small_spec(Backbone::kUNet, 1, FinalActivation::kSoftmax);
  s.out_channels = 1;
  CHECK_THROWS_AS(s.validate(), tempo::ConfigError);
  CHECK_THROWS_AS(tempo::backbone_from_string("vgg"), tempo::ConfigError);
  CHECK_THROWS_AS(tempo::activation_from_string("relu"), tempo::ConfigError);
}
