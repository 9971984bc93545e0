#pragma once

// The four networks: G1 (visible -> synthetic infrared, encoder-decoder or
// U-Net), G2 (visible (+) infrared -> fused), and the patch discriminators
// D1/D2 with spectrally normalized weights.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "firegan/errors.hpp"
#include "firegan/image.hpp"
#include "firegan/ops.hpp"
#include "firegan/random.hpp"

namespace firegan {

enum class NetworkKind { g1_encdec, g1_unet, g2, discriminator };

inline const char* kind_name(NetworkKind k) {
  switch (k) {
    case NetworkKind::g1_encdec: return "g1_encdec";
    case NetworkKind::g1_unet: return "g1_unet";
    case NetworkKind::g2: return "g2";
    case NetworkKind::discriminator: return "discriminator";
  }
  return "?";
}

inline NetworkKind parse_kind(const std::string& s) {
  if (s == "g1_encdec") return NetworkKind::g1_encdec;
  if (s == "g1_unet") return NetworkKind::g1_unet;
  if (s == "g2") return NetworkKind::g2;
  if (s == "discriminator") return NetworkKind::discriminator;
  throw ValidationError("unknown network kind '" + s + "'");
}

inline bool is_g1(NetworkKind k) { return k == NetworkKind::g1_encdec || k == NetworkKind::g1_unet; }

struct NetworkSpec {
  NetworkKind kind = NetworkKind::g1_unet;
  int depth = 4;          // g1: down/up stages; g2: hidden layers; discriminator: stride-2 layers
  int base_filters = 64;
  int kernel_size = 4;
  bool use_spectral_norm = false;
  int output_channels = 3;

  int input_channels() const { return kind == NetworkKind::g2 ? 6 : 3; }

  void validate() const {
    if (depth < 1) throw ValidationError("network depth must be >= 1");
    if (base_filters < 1) throw ValidationError("base_filters must be >= 1");
    if (kernel_size < 1) throw ValidationError("kernel_size must be >= 1");
    if (kind == NetworkKind::discriminator) {
      if (output_channels != 1) throw ValidationError("discriminator output_channels must be 1");
    } else if (output_channels != 3) {
      throw ValidationError("generator output_channels must be 3");
    }
    if (is_g1(kind) && (kernel_size < 2 || kernel_size % 2 != 0))
      throw ValidationError("g1 kernel_size must be even (stride-2 resampling), got " +
                            std::to_string(kernel_size));
    if (kind == NetworkKind::g2 && kernel_size % 2 == 0)
      throw ValidationError("g2 kernel_size must be odd");
  }

  // Isola-style image-to-image generator.
  static NetworkSpec g1(bool unet = true) {
    return {unet ? NetworkKind::g1_unet : NetworkKind::g1_encdec, 4, 64, 4, false, 3};
  }
  // FusionGAN-style 256-128-64-32 body with a 5-5-3-3-1 kernel taper.
  static NetworkSpec g2() { return {NetworkKind::g2, 4, 32, 5, false, 3}; }
  static NetworkSpec discriminator() { return {NetworkKind::discriminator, 4, 32, 5, true, 1}; }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

enum class Activation { none, leaky_relu, relu, tanh };

struct ForwardOptions {
  bool training = false;      // batch statistics in feature normalization
  bool update_state = false;  // fold into running stats / advance spectral-norm vectors
  int zeroed_skip = -1;       // u-net only: zero the skip feeding decoder stage (index + 1)

  static ForwardOptions train() { return {true, true, -1}; }
  static ForwardOptions train_frozen() { return {true, false, -1}; }
  static ForwardOptions eval() { return {false, false, -1}; }
};

// Singular-vector warm-up iterations at construction, so freshly built
// discriminators start with an accurate normalization.
inline constexpr std::size_t kSpectralWarmupIterations = 30;
inline constexpr double kInitStddev = 0.02;
inline constexpr double kLeakySlope = 0.2;

template <typename T>
class Network {
 public:
  struct Layer {
    std::string name;
    bool transposed = false;
    int in = 0, out = 0, kernel = 1, stride = 1, pad = 0;
    bool norm = false;
    bool spectral = false;
    Activation act = Activation::none;
    Var<T> weight, bias, gamma, beta;
    ops::BatchNormState<T> bn;
    Tensor<T> sn_u;
  };

  Network(NetworkSpec spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    plan_layers();
    initialize(seed);
  }

  // Parameters are shared handles; copies would alias them.
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const noexcept { return spec_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  // Trainable parameters in a fixed order.
  std::vector<std::pair<std::string, Var<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Var<T>>> out;
    for (const auto& l : layers_) {
      out.emplace_back(l.name + ".weight", l.weight);
      if (l.bias.defined()) out.emplace_back(l.name + ".bias", l.bias);
      if (l.norm) {
        out.emplace_back(l.name + ".bn.gamma", l.gamma);
        out.emplace_back(l.name + ".bn.beta", l.beta);
      }
    }
    return out;
  }

  std::vector<Var<T>> parameters() const {
    std::vector<Var<T>> out;
    for (auto& [name, v] : named_parameters()) out.push_back(v);
    return out;
  }

  // Non-trainable state: running moments and spectral-norm vectors.
  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& l : layers_) {
      if (l.norm) {
        out.emplace_back(l.name + ".bn.running_mean", &l.bn.running_mean);
        out.emplace_back(l.name + ".bn.running_var", &l.bn.running_var);
      }
      if (l.spectral) out.emplace_back(l.name + ".sn.u", &l.sn_u);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, v] : named_parameters()) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : named_parameters()) v.zero_grad();
  }

  void check_input(const Shape& s) const {
    if (s.size() != 4) throw ShapeError(std::string(kind_name(spec_.kind)) + ": input must be NCHW");
    if (static_cast<int>(s[1]) != spec_.input_channels())
      throw ShapeError(std::string(kind_name(spec_.kind)) + ": expected " +
                       std::to_string(spec_.input_channels()) + " input channels, got " +
                       std::to_string(s[1]));
    if (is_g1(spec_.kind)) {
      const std::size_t m = std::size_t{1} << spec_.depth;
      if (s[2] % m != 0 || s[3] % m != 0)
        throw ShapeError("g1: input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                         " not divisible by 2^depth = " + std::to_string(m));
    }
  }

  Var<T> forward(const Var<T>& x, const ForwardOptions& opt = ForwardOptions::eval()) {
    check_input(x.shape());
    switch (spec_.kind) {
      case NetworkKind::g1_encdec:
      case NetworkKind::g1_unet: return forward_g1(x, opt);
      default: {
        Var<T> h = x;
        for (auto& l : layers_) h = apply(l, h, opt);
        return h;
      }
    }
  }

  // Weight as seen by the forward pass (divided by its spectral-norm estimate
  // when enabled), after `iterations` power-iteration steps on the persisted
  // vector. Used for verification; does not touch the persisted state.
  Tensor<T> effective_weight(std::size_t layer, std::size_t iterations) const {
    const Layer& l = layers_.at(layer);
    if (!l.spectral) return l.weight.value();
    NoGradGuard guard;
    Tensor<T> u = l.sn_u;
    return ops::spectral_normalize(l.weight, u, iterations, false).value();
  }

 private:
  void add_layer(std::string name, bool transposed, int in, int out, int k, int stride, int pad,
                 bool norm, Activation act, bool bias) {
    Layer l;
    l.name = std::move(name);
    l.transposed = transposed;
    l.in = in;
    l.out = out;
    l.kernel = k;
    l.stride = stride;
    l.pad = pad;
    l.norm = norm;
    l.act = act;
    l.spectral = spec_.use_spectral_norm;
    // The bias is redundant ahead of feature normalization.
    if (bias && !norm) l.bias = Var<T>(Tensor<T>(Shape{static_cast<std::size_t>(out)}), true);
    layers_.push_back(std::move(l));
  }

  void plan_layers() {
    const int d = spec_.depth, b = spec_.base_filters, k = spec_.kernel_size;
    switch (spec_.kind) {
      case NetworkKind::g1_encdec:
      case NetworkKind::g1_unet: {
        const bool unet = spec_.kind == NetworkKind::g1_unet;
        const int pad = (k - 2) / 2;  // exact halving/doubling for even kernels
        std::vector<int> enc(d);
        for (int i = 0; i < d; ++i) enc[i] = b * (1 << std::min(i, 3));
        int in = spec_.input_channels();
        for (int i = 0; i < d; ++i) {
          add_layer("enc" + std::to_string(i + 1), false, in, enc[i], k, 2, pad, i > 0,
                    Activation::leaky_relu, true);
          in = enc[i];
        }
        for (int j = 0; j < d; ++j) {
          const int skip = (unet && j > 0) ? enc[d - 1 - j] : 0;
          const bool last = j == d - 1;
          const int out = last ? spec_.output_channels : enc[d - 2 - j];
          add_layer("dec" + std::to_string(j + 1), true, in + skip, out, k, 2, pad, !last,
                    last ? Activation::tanh : Activation::relu, true);
          in = out;
        }
        break;
      }
      case NetworkKind::g2: {
        int in = spec_.input_channels();
        for (int i = 0; i < d; ++i) {
          const int out = b * (1 << (d - 1 - i));
          const int ki = i < (d + 1) / 2 ? k : std::max(1, k - 2);
          add_layer("conv" + std::to_string(i + 1), false, in, out, ki, 1, ki / 2, true,
                    Activation::leaky_relu, true);
          in = out;
        }
        add_layer("head", false, in, spec_.output_channels, 1, 1, 0, false, Activation::tanh, true);
        break;
      }
      case NetworkKind::discriminator: {
        int in = spec_.input_channels();
        for (int i = 0; i < d; ++i) {
          const int out = b * (1 << i);
          add_layer("conv" + std::to_string(i + 1), false, in, out, k, 2, k / 2, false,
                    Activation::leaky_relu, true);
          in = out;
        }
        add_layer("score", false, in, 1, 1, 1, 0, false, Activation::none, true);
        break;
      }
    }
  }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& l : layers_) {
      const Shape ws = l.transposed
                           ? Shape{static_cast<std::size_t>(l.in), static_cast<std::size_t>(l.out),
                                   static_cast<std::size_t>(l.kernel), static_cast<std::size_t>(l.kernel)}
                           : Shape{static_cast<std::size_t>(l.out), static_cast<std::size_t>(l.in),
                                   static_cast<std::size_t>(l.kernel), static_cast<std::size_t>(l.kernel)};
      Tensor<T> w(ws);
      for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, kInitStddev));
      l.weight = Var<T>(std::move(w), true);
      const auto out = static_cast<std::size_t>(l.out);
      if (l.norm) {
        l.gamma = Var<T>(Tensor<T>(Shape{out}, T{1}), true);
        l.beta = Var<T>(Tensor<T>(Shape{out}), true);
        l.bn.running_mean = Tensor<T>(Shape{out}, T{0});
        l.bn.running_var = Tensor<T>(Shape{out}, T{1});
      }
      if (l.spectral) {
        const std::size_t rows = ws[0];
        Tensor<T> u(Shape{rows});
        T norm{0};
        for (auto& v : u.values()) {
          v = static_cast<T>(rng.normal(0.0, 1.0));
          norm += v * v;
        }
        for (auto& v : u.values()) v /= std::sqrt(norm);
        ops::power_iteration(l.weight.value(), rows, u, kSpectralWarmupIterations);
        l.sn_u = std::move(u);
      }
    }
  }

  Var<T> apply(Layer& l, const Var<T>& x, const ForwardOptions& opt) {
    Var<T> w = l.weight;
    if (l.spectral) {
      const bool update = opt.training && opt.update_state;
      w = ops::spectral_normalize(l.weight, l.sn_u, update ? 1 : 0, update);
    }
    Var<T> h = l.transposed
                   ? ops::conv_transpose2d(x, w, l.bias, static_cast<std::size_t>(l.stride),
                                           static_cast<std::size_t>(l.pad))
                   : ops::conv2d(x, w, l.bias, static_cast<std::size_t>(l.stride),
                                 static_cast<std::size_t>(l.pad));
    if (l.norm) h = ops::batch_norm(h, l.gamma, l.beta, l.bn, opt.training, opt.update_state);
    switch (l.act) {
      case Activation::leaky_relu: return ops::leaky_relu(h, static_cast<T>(kLeakySlope));
      case Activation::relu: return ops::relu(h);
      case Activation::tanh: return ops::tanh(h);
      case Activation::none: break;
    }
    return h;
  }

  Var<T> forward_g1(const Var<T>& x, const ForwardOptions& opt) {
    const int d = spec_.depth;
    const bool unet = spec_.kind == NetworkKind::g1_unet;
    std::vector<Var<T>> enc;
    Var<T> h = x;
    for (int i = 0; i < d; ++i) {
      h = apply(layers_[static_cast<std::size_t>(i)], h, opt);
      enc.push_back(h);
    }
    for (int j = 0; j < d; ++j) {
      if (unet && j > 0) {
        Var<T> skip = enc[static_cast<std::size_t>(d - 1 - j)];
        if (opt.zeroed_skip == j - 1) skip = ops::scale(skip, T{0});
        h = ops::concat_channels(h, skip);
      }
      h = apply(layers_[static_cast<std::size_t>(d + j)], h, opt);
    }
    return h;
  }

  NetworkSpec spec_;
  std::vector<Layer> layers_;
};

template <typename T = float>
Network<T> build_g1(const NetworkSpec& spec, std::uint64_t seed) {
  if (!is_g1(spec.kind)) throw ValidationError("build_g1 needs a g1_encdec or g1_unet spec");
  return Network<T>(spec, seed);
}

template <typename T = float>
Network<T> build_g2(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.kind != NetworkKind::g2) throw ValidationError("build_g2 needs a g2 spec");
  return Network<T>(spec, seed);
}

template <typename T = float>
Network<T> build_discriminator(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.kind != NetworkKind::discriminator)
    throw ValidationError("build_discriminator needs a discriminator spec");
  return Network<T>(spec, seed);
}

// Synthetic infrared from a model-domain visible image (evaluation mode).
template <typename T>
Image generate_ir(Network<T>& g1, const Image& visible) {
  if (visible.domain() != Domain::model_signed)
    throw DomainError("generate_ir expects a model_signed visible image");
  if (visible.channels() != 3) throw ShapeError("generate_ir expects a 3-channel visible image");
  NoGradGuard guard;
  Var<T> out = g1.forward(Var<T>(to_tensor<T>(visible)), ForwardOptions::eval());
  return from_tensor(out.value(), 0, Domain::model_signed);
}

// Fused image from registered model-domain visible and infrared images.
template <typename T>
Image fuse(Network<T>& g2, const Image& visible, const Image& infrared) {
  if (visible.domain() != Domain::model_signed || infrared.domain() != Domain::model_signed)
    throw DomainError("fuse expects model_signed inputs");
  if (visible.height() != infrared.height() || visible.width() != infrared.width())
    throw ShapeError("fuse: visible and infrared dimensions differ");
  NoGradGuard guard;
  Var<T> v(to_tensor<T>(visible));
  Var<T> ir(to_tensor<T>(replicate_to_rgb(infrared)));
  Var<T> out = g2.forward(ops::concat_channels(v, ir), ForwardOptions::eval());
  return from_tensor(out.value(), 0, Domain::model_signed);
}

}  // namespace firegan
