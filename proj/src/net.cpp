#include "tempo/net.hpp"

#include <cstring>
#include <fstream>

#include "tempo/errors.hpp"
#include "tempo/kernels.hpp"
#include "tempo/rng.hpp"

namespace tempo {

Backbone backbone_from_string(const std::string& s) {
  if (s == "unet") return Backbone::kUNet;
  if (s == "resunet") return Backbone::kResUNet;
  if (s == "fcn") return Backbone::kFcn;
  throw ConfigError("unknown backbone '" + s + "' (expected unet, resunet, or fcn)");
}

FinalActivation activation_from_string(const std::string& s) {
  if (s == "sigmoid") return FinalActivation::kSigmoid;
  if (s == "softmax") return FinalActivation::kSoftmax;
  if (s == "none") return FinalActivation::kNone;
  throw ConfigError("unknown final activation '" + s + "' (expected sigmoid, softmax, or none)");
}

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::kUNet: return "unet";
    case Backbone::kResUNet: return "resunet";
    case Backbone::kFcn: return "fcn";
  }
  return "?";
}

std::string to_string(FinalActivation a) {
  switch (a) {
    case FinalActivation::kSigmoid: return "sigmoid";
    case FinalActivation::kSoftmax: return "softmax";
    case FinalActivation::kNone: return "none";
  }
  return "?";
}

void NetSpec::validate() const {
  if (depth < 1 || depth > 5)
    throw ConfigError("net depth must be in 1..5, got " + std::to_string(depth));
  if (base_channels < 1 || base_channels > 512)
    throw ConfigError("base_channels must be in 1..512, got " + std::to_string(base_channels));
  if (heads != 1 && heads != 2)
    throw ConfigError("heads must be 1 or 2, got " + std::to_string(heads));
  if (in_channels != 1 && in_channels != 3)
    throw ConfigError("in_channels must be 1 or 3, got " + std::to_string(in_channels));
  if (out_channels < 1)
    throw ConfigError("out_channels must be positive, got " + std::to_string(out_channels));
  if (final_activation == FinalActivation::kSoftmax && out_channels < 2)
    throw ConfigError("softmax output needs at least 2 channels per head");
}

// ---------------------------------------------------------------------------
// graph construction

template <typename T>
void Network<T>::build_graph() {
  ops_.clear();
  params_.clear();

  int cur = -1;  // current slot; -1 is the network input
  int cur_ch = spec_.in_channels;

  auto add_conv = [&](int out_ch, const std::string& name) {
    ConvParam<T> p;
    p.name = name;
    p.in_ch = cur_ch;
    p.out_ch = out_ch;
    p.w.resize(static_cast<size_t>(out_ch) * cur_ch * 9);
    p.b.resize(out_ch);
    params_.push_back(std::move(p));
    ops_.push_back({OpKind::kConv, static_cast<int>(params_.size()) - 1, cur, -1});
    cur = static_cast<int>(ops_.size()) - 1;
    cur_ch = out_ch;
  };
  auto add_simple = [&](OpKind kind) {
    ops_.push_back({kind, -1, cur, -1});
    cur = static_cast<int>(ops_.size()) - 1;
  };
  auto add_relu = [&] { add_simple(OpKind::kLRelu); };

  // Two or three convs at one resolution; resunet adds a residual unit.
  auto add_block = [&](int ch, const std::string& name) {
    add_conv(ch, name + "_conv0");
    add_relu();
    if (spec_.backbone == Backbone::kResUNet) {
      const int block_in = cur;
      add_conv(ch, name + "_conv1");
      add_relu();
      add_conv(ch, name + "_conv2");
      ops_.push_back({OpKind::kAdd, -1, cur, block_in});
      cur = static_cast<int>(ops_.size()) - 1;
      add_relu();
    } else {
      add_conv(ch, name + "_conv1");
      add_relu();
    }
  };

  std::vector<int> taps(spec_.depth);      // skip sources
  std::vector<int> tap_ch(spec_.depth);

  for (int lvl = 0; lvl < spec_.depth; ++lvl) {
    const int ch = spec_.base_channels << lvl;
    add_block(ch, "enc" + std::to_string(lvl));
    taps[lvl] = cur;
    tap_ch[lvl] = cur_ch;
    add_simple(OpKind::kPool);
  }

  add_block(spec_.base_channels << spec_.depth, "mid");

  for (int lvl = spec_.depth - 1; lvl >= 0; --lvl) {
    const int ch = spec_.base_channels << lvl;
    add_simple(OpKind::kUp);
    if (spec_.backbone != Backbone::kFcn) {  // fcn has no skip connections
      ops_.push_back({OpKind::kConcat, -1, cur, taps[lvl]});
      cur = static_cast<int>(ops_.size()) - 1;
      cur_ch += tap_ch[lvl];
    }
    add_block(ch, "dec" + std::to_string(lvl));
  }

  add_conv(spec_.heads * spec_.out_channels, "head");
  if (spec_.final_activation == FinalActivation::kSigmoid)
    add_simple(OpKind::kSigmoid);
  else if (spec_.final_activation == FinalActivation::kSoftmax)
    add_simple(OpKind::kSoftmax);
}

template <typename T>
Network<T> Network<T>::build(const NetSpec& spec) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  net.build_graph();
  Rng rng(spec.rng_seed);
  for (auto& p : net.params_) {
    const double limit = std::sqrt(3.0 / (9.0 * p.in_ch));  // fan-in scaled
    for (auto& v : p.w) v = static_cast<T>(rng.uniform(-limit, limit));
    // biases start at zero
  }
  return net;
}

template <typename T>
size_t Network<T>::param_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.w.size() + p.b.size();
  return n;
}

// ---------------------------------------------------------------------------
// forward / backward

template <typename T>
std::vector<Image<T>> Network<T>::forward(const Image<T>& input, Tape<T>* tape) const {
  if (input.channels != spec_.in_channels)
    throw DataError("network expects " + std::to_string(spec_.in_channels) +
                    " input channels, got " + std::to_string(input.channels));
  const int m = spec_.size_multiple();
  if (input.height % m != 0 || input.width % m != 0)
    throw DataError("network input " + input.shape_str() + " is not a multiple of " +
                    std::to_string(m) + "; pad it first");

  std::vector<Image<T>> slots(ops_.size());
  auto src = [&](int idx) -> const Image<T>& { return idx < 0 ? input : slots[idx]; };

  for (size_t i = 0; i < ops_.size(); ++i) {
    const OpDef& op = ops_[i];
    const Image<T>& a = src(op.src);
    switch (op.kind) {
      case OpKind::kConv: {
        const ConvParam<T>& p = params_[op.param];
        Image<T> out(p.out_ch, a.height, a.width);
        kernels::conv3x3(a.data.data(), p.in_ch, a.height, a.width, p.w.data(), p.b.data(),
                         p.out_ch, out.data.data());
        slots[i] = std::move(out);
        break;
      }
      case OpKind::kLRelu: {
        Image<T> out(a.channels, a.height, a.width);
        kernels::leaky_relu(a.data.data(), a.data.size(), static_cast<T>(kLeakySlope),
                            out.data.data());
        slots[i] = std::move(out);
        break;
      }
      case OpKind::kPool: {
        Image<T> out(a.channels, a.height / 2, a.width / 2);
        kernels::avgpool2(a.data.data(), a.channels, a.height, a.width, out.data.data());
        slots[i] = std::move(out);
        break;
      }
      case OpKind::kUp: {
        Image<T> out(a.channels, a.height * 2, a.width * 2);
        kernels::upsample2(a.data.data(), a.channels, a.height, a.width, out.data.data());
        slots[i] = std::move(out);
        break;
      }
      case OpKind::kConcat: {
        const Image<T>& b = slots[op.src2];
        Image<T> out(a.channels + b.channels, a.height, a.width);
        std::memcpy(out.data.data(), a.data.data(), a.data.size() * sizeof(T));
        std::memcpy(out.data.data() + a.data.size(), b.data.data(), b.data.size() * sizeof(T));
        slots[i] = std::move(out);
        break;
      }
      case OpKind::kAdd: {
        const Image<T>& b = slots[op.src2];
        Image<T> out(a.channels, a.height, a.width);
        for (size_t j = 0; j < out.data.size(); ++j) out.data[j] = a.data[j] + b.data[j];
        slots[i] = std::move(out);
        break;
      }
      case OpKind::kSigmoid: {
        Image<T> out(a.channels, a.height, a.width);
        kernels::sigmoid(a.data.data(), a.data.size(), out.data.data());
        slots[i] = std::move(out);
        break;
      }
      case OpKind::kSoftmax: {
        Image<T> out(a.channels, a.height, a.width);
        kernels::softmax_groups(a.data.data(), spec_.heads, spec_.out_channels, a.height, a.width,
                                out.data.data());
        slots[i] = std::move(out);
        break;
      }
    }
  }

  const Image<T>& fin = slots.back();
  std::vector<Image<T>> heads(spec_.heads);
  for (int h = 0; h < spec_.heads; ++h) {
    Image<T> img(spec_.out_channels, fin.height, fin.width);
    std::memcpy(img.data.data(), fin.plane(h * spec_.out_channels),
                img.data.size() * sizeof(T));
    heads[h] = std::move(img);
  }
  if (tape) {
    tape->input = input;
    tape->slots = std::move(slots);
  }
  return heads;
}

template <typename T>
void Network<T>::backward(const Tape<T>& tape, const std::vector<Image<T>>& head_grads,
                          Gradients<T>* grads) const {
  if (tape.slots.size() != ops_.size()) throw ConfigError("backward: tape does not match network");
  if (static_cast<int>(head_grads.size()) != spec_.heads)
    throw ConfigError("backward: expected " + std::to_string(spec_.heads) + " head gradients");
  grads->resize_like(params_);

  std::vector<Image<T>> gslot(ops_.size());
  auto ensure = [&](int idx, const Image<T>& like) -> Image<T>& {
    Image<T>& g = gslot[idx];
    if (g.data.empty()) g = Image<T>(like.channels, like.height, like.width, T(0));
    return g;
  };
  auto src_img = [&](int idx) -> const Image<T>& {
    return idx < 0 ? tape.input : tape.slots[idx];
  };

  {  // seed the last slot from the per-head gradients
    const Image<T>& fin = tape.slots.back();
    Image<T>& g = ensure(static_cast<int>(ops_.size()) - 1, fin);
    for (int h = 0; h < spec_.heads; ++h)
      std::memcpy(g.plane(h * spec_.out_channels), head_grads[h].data.data(),
                  head_grads[h].data.size() * sizeof(T));
  }

  std::vector<T> scratch;
  auto add_into = [](Image<T>& dst, const T* s, size_t n) {
    for (size_t j = 0; j < n; ++j) dst.data[j] += s[j];
  };

  for (int i = static_cast<int>(ops_.size()) - 1; i >= 0; --i) {
    const OpDef& op = ops_[i];
    const Image<T>& g = gslot[i];
    if (g.data.empty()) continue;  // no gradient reached this op
    const Image<T>& a = src_img(op.src);
    switch (op.kind) {
      case OpKind::kConv: {
        const ConvParam<T>& p = params_[op.param];
        kernels::conv3x3_grad_params(a.data.data(), p.in_ch, g.data.data(), p.out_ch, a.height,
                                     a.width, grads->w[op.param].data(),
                                     grads->b[op.param].data());
        if (op.src >= 0) {
          scratch.resize(a.data.size());
          kernels::conv3x3_grad_input(g.data.data(), p.out_ch, a.height, a.width, p.w.data(),
                                      p.in_ch, scratch.data());
          add_into(ensure(op.src, a), scratch.data(), a.data.size());
        }
        break;
      }
      case OpKind::kLRelu: {
        scratch.resize(a.data.size());
        kernels::leaky_relu_grad(a.data.data(), g.data.data(), a.data.size(),
                                 static_cast<T>(kLeakySlope), scratch.data());
        add_into(ensure(op.src, a), scratch.data(), a.data.size());
        break;
      }
      case OpKind::kPool: {
        scratch.resize(a.data.size());
        kernels::avgpool2_grad(g.data.data(), a.channels, a.height, a.width, scratch.data());
        add_into(ensure(op.src, a), scratch.data(), a.data.size());
        break;
      }
      case OpKind::kUp: {
        scratch.resize(a.data.size());
        kernels::upsample2_grad(g.data.data(), a.channels, a.height, a.width, scratch.data());
        add_into(ensure(op.src, a), scratch.data(), a.data.size());
        break;
      }
      case OpKind::kConcat: {
        const Image<T>& b = tape.slots[op.src2];
        Image<T>& ga = ensure(op.src, a);
        for (size_t j = 0; j < a.data.size(); ++j) ga.data[j] += g.data[j];
        Image<T>& gb = ensure(op.src2, b);
        const T* gtail = g.data.data() + a.data.size();
        for (size_t j = 0; j < b.data.size(); ++j) gb.data[j] += gtail[j];
        break;
      }
      case OpKind::kAdd: {
        add_into(ensure(op.src, a), g.data.data(), g.data.size());
        add_into(ensure(op.src2, tape.slots[op.src2]), g.data.data(), g.data.size());
        break;
      }
      case OpKind::kSigmoid: {
        const Image<T>& out = tape.slots[i];
        scratch.resize(a.data.size());
        kernels::sigmoid_grad(out.data.data(), g.data.data(), a.data.size(), scratch.data());
        add_into(ensure(op.src, a), scratch.data(), a.data.size());
        break;
      }
      case OpKind::kSoftmax: {
        const Image<T>& out = tape.slots[i];
        scratch.resize(a.data.size());
        kernels::softmax_groups_grad(out.data.data(), g.data.data(), spec_.heads,
                                     spec_.out_channels, a.height, a.width, scratch.data());
        add_into(ensure(op.src, a), scratch.data(), a.data.size());
        break;
      }
    }
    gslot[i] = Image<T>();  // free as we go
  }
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kCkptMagic[8] = {'T', 'M', 'P', 'O', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

void wr(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename V>
void wr_val(std::ofstream& f, V v) {
  wr(f, &v, sizeof(v));
}

void rd(std::ifstream& f, void* p, size_t n, const std::string& path) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n))
    throw DataError("corrupt checkpoint (truncated): " + path);
}
template <typename V>
V rd_val(std::ifstream& f, const std::string& path) {
  V v;
  rd(f, &v, sizeof(v), path);
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  const NetSpec& s = net.spec();
  wr(f, kCkptMagic, sizeof(kCkptMagic));
  wr_val<uint32_t>(f, kCkptVersion);
  wr_val<uint8_t>(f, sizeof(T));
  wr_val<uint8_t>(f, static_cast<uint8_t>(s.backbone));
  wr_val<uint8_t>(f, static_cast<uint8_t>(s.depth));
  wr_val<uint32_t>(f, static_cast<uint32_t>(s.base_channels));
  wr_val<uint8_t>(f, static_cast<uint8_t>(s.heads));
  wr_val<uint8_t>(f, static_cast<uint8_t>(s.in_channels));
  wr_val<uint32_t>(f, static_cast<uint32_t>(s.out_channels));
  wr_val<uint8_t>(f, static_cast<uint8_t>(s.final_activation));
  wr_val<uint64_t>(f, s.rng_seed);
  wr_val<uint32_t>(f, static_cast<uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    wr_val<uint16_t>(f, static_cast<uint16_t>(p.name.size()));
    wr(f, p.name.data(), p.name.size());
    wr_val<uint32_t>(f, static_cast<uint32_t>(p.in_ch));
    wr_val<uint32_t>(f, static_cast<uint32_t>(p.out_ch));
    wr_val<uint64_t>(f, p.w.size());
    wr_val<uint64_t>(f, p.b.size());
    wr(f, p.w.data(), p.w.size() * sizeof(T));
    wr(f, p.b.data(), p.b.size() * sizeof(T));
  }
  if (!f) throw DataError("failed writing checkpoint: " + path);
}

namespace {

template <typename T, typename S>
void read_param_data(std::ifstream& f, ConvParam<T>& p, size_t wn, size_t bn,
                     const std::string& path) {
  std::vector<S> buf(wn);
  rd(f, buf.data(), wn * sizeof(S), path);
  p.w.resize(wn);
  for (size_t i = 0; i < wn; ++i) p.w[i] = static_cast<T>(buf[i]);
  buf.resize(bn);
  rd(f, buf.data(), bn * sizeof(S), path);
  p.b.resize(bn);
  for (size_t i = 0; i < bn; ++i) p.b[i] = static_cast<T>(buf[i]);
}

}  // namespace

template <typename T>
Network<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  rd(f, magic, sizeof(magic), path);
  if (std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  const auto version = rd_val<uint32_t>(f, path);
  if (version != kCkptVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  const auto scalar = rd_val<uint8_t>(f, path);
  if (scalar != 4 && scalar != 8) throw DataError("corrupt checkpoint (scalar size): " + path);

  NetSpec s;
  s.backbone = static_cast<Backbone>(rd_val<uint8_t>(f, path));
  s.depth = rd_val<uint8_t>(f, path);
  s.base_channels = static_cast<int>(rd_val<uint32_t>(f, path));
  s.heads = rd_val<uint8_t>(f, path);
  s.in_channels = rd_val<uint8_t>(f, path);
  s.out_channels = static_cast<int>(rd_val<uint32_t>(f, path));
  s.final_activation = static_cast<FinalActivation>(rd_val<uint8_t>(f, path));
  s.rng_seed = rd_val<uint64_t>(f, path);
  if (static_cast<int>(s.backbone) > 2 || static_cast<int>(s.final_activation) > 2)
    throw DataError("corrupt checkpoint (bad spec): " + path);
  s.validate();

  Network<T> net = Network<T>::build(s);
  const auto n_params = rd_val<uint32_t>(f, path);
  if (n_params != net.params().size())
    throw DataError("corrupt checkpoint (parameter list mismatch): " + path);
  for (auto& p : net.params()) {
    const auto name_len = rd_val<uint16_t>(f, path);
    std::string name(name_len, '\0');
    rd(f, name.data(), name_len, path);
    if (name != p.name) throw DataError("corrupt checkpoint (unexpected array " + name + "): " + path);
    const auto in_ch = rd_val<uint32_t>(f, path);
    const auto out_ch = rd_val<uint32_t>(f, path);
    const auto wn = rd_val<uint64_t>(f, path);
    const auto bn = rd_val<uint64_t>(f, path);
    if (static_cast<int>(in_ch) != p.in_ch || static_cast<int>(out_ch) != p.out_ch ||
        wn != p.w.size() || bn != p.b.size())
      throw DataError("corrupt checkpoint (shape mismatch in " + name + "): " + path);
    if (scalar == 4)
      read_param_data<T, float>(f, p, wn, bn, path);
    else
      read_param_data<T, double>(f, p, wn, bn, path);
  }
  return net;
}

// ---------------------------------------------------------------------------
// padding

template <typename T>
Image<T> pad_to_multiple(const Image<T>& img, int multiple, PadInfo* info) {
  if (multiple < 1) throw ConfigError("pad multiple must be positive");
  const int ph = (img.height + multiple - 1) / multiple * multiple;
  const int pw = (img.width + multiple - 1) / multiple * multiple;
  if (info) *info = {img.height, img.width};
  if (ph == img.height && pw == img.width) return img;

  // mirror index with edge repeat at the fold, bouncing for deep pads
  auto mirror = [](int q, int n) {
    while (q < 0 || q >= n) {
      if (q < 0) q = -q - 1;
      if (q >= n) q = 2 * n - 1 - q;
    }
    return q;
  };
  Image<T> out(img.channels, ph, pw);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < ph; ++y) {
      const int sy = mirror(y, img.height);
      for (int x = 0; x < pw; ++x) out.at(c, y, x) = img.at(c, sy, mirror(x, img.width));
    }
  return out;
}

template <typename T>
Image<T> crop_to(const Image<T>& img, int h, int w) {
  if (h > img.height || w > img.width)
    throw ConfigError("crop_to: target larger than image");
  if (h == img.height && w == img.width) return img;
  Image<T> out(img.channels, h, w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      std::memcpy(&out.at(c, y, 0), &img.at(c, y, 0), sizeof(T) * w);
  return out;
}

// ---------------------------------------------------------------------------

template class Network<float>;
template class Network<double>;
template void save_checkpoint<float>(const Network<float>&, const std::string&);
template void save_checkpoint<double>(const Network<double>&, const std::string&);
template Network<float> load_checkpoint<float>(const std::string&);
template Network<double> load_checkpoint<double>(const std::string&);
template Image<float> pad_to_multiple<float>(const Image<float>&, int, PadInfo*);
template Image<double> pad_to_multiple<double>(const Image<double>&, int, PadInfo*);
template Image<float> crop_to<float>(const Image<float>&, int, int);
template Image<double> crop_to<double>(const Image<double>&, int, int);

}  // namespace tempo
