#pragma once

// Run configuration: a flat TOML table. Every key has a default (the
// published training protocol where one exists), unknown keys are
// rejected, and the resolved configuration can be written back out so a run
// can be repeated from its echo.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <toml.hpp>

#include "firegan/data.hpp"
#include "firegan/errors.hpp"
#include "firegan/training.hpp"

namespace firegan::config {

namespace fs = std::filesystem;

struct RunConfig {
  ModelConfig models;
  TrainingConfig training;
  metrics::MetricParams metrics;

  // Corpus and split.
  std::string corpus_dir;
  std::string manifest;
  std::string visible_suffix = "_rgb";
  std::string infrared_suffix = "_nir";
  std::size_t val_count = 96;
  std::size_t train_count = 0;  // 0: every pair not in the validation set
  std::size_t augmentation_factor = 16;
  std::size_t augmented_train_count = 6112;  // 0: pool size x augmentation_factor
  std::size_t transfer_val_count = 128;
  std::size_t transfer_augmented_train_count = 8192;

  // Outputs and inputs of individual commands.
  std::string output_dir = "runs/firegan";
  std::string checkpoint;
  std::string eval_split = "val";

  void validate() const {
    models.validate();
    training.validate();
    metrics.validate();
    if (augmentation_factor < 1) throw ValidationError("augmentation_factor must be >= 1");
    if (visible_suffix.empty() || infrared_suffix.empty() || visible_suffix == infrared_suffix)
      throw ValidationError("visible_suffix and infrared_suffix must be distinct and non-empty");
    if (eval_split != "train" && eval_split != "val" && eval_split != "all")
      throw ValidationError("eval_split must be train, val or all");
  }

  data::PairingRule pairing() const { return {visible_suffix, infrared_suffix}; }

  data::SplitSpec split_spec(bool transfer = false) const {
    data::SplitSpec s;
    s.val_count = transfer ? transfer_val_count : val_count;
    if (train_count > 0) s.train_count = train_count;
    s.augmentation_factor = augmentation_factor;
    const std::size_t target = transfer ? transfer_augmented_train_count : augmented_train_count;
    if (target > 0) s.augmented_train_count = target;
    s.seed = training.seed;
    return s;
  }
};

namespace detail {

enum class Kind { integer, real, boolean, string };

struct Key {
  const char* name;
  Kind kind;
  const char* doc;
  std::function<void(RunConfig&, const toml::node&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string fmt_string(const std::string& s) {
  std::ostringstream os;
  os << toml::value<std::string>(s);
  return os.str();
}

inline std::int64_t as_int(const toml::node& n, const char* key) {
  if (auto v = n.value_exact<std::int64_t>()) return *v;
  throw ValidationError(std::string("config key '") + key + "' must be an integer");
}
inline double as_real(const toml::node& n, const char* key) {
  if (auto v = n.value_exact<double>()) return *v;
  if (auto v = n.value_exact<std::int64_t>()) return static_cast<double>(*v);
  throw ValidationError(std::string("config key '") + key + "' must be a number");
}
inline bool as_bool(const toml::node& n, const char* key) {
  if (auto v = n.value_exact<bool>()) return *v;
  throw ValidationError(std::string("config key '") + key + "' must be a boolean");
}
inline std::string as_string(const toml::node& n, const char* key) {
  if (auto v = n.value_exact<std::string>()) return *v;
  throw ValidationError(std::string("config key '") + key + "' must be a string");
}

// Builders for the common field shapes.
template <typename Get>
Key integer(const char* name, const char* doc, std::int64_t lo, Get field) {
  return {name, Kind::integer, doc,
          [=](RunConfig& c, const toml::node& n) {
            const auto v = as_int(n, name);
            if (v < lo)
              throw ValidationError(std::string("config key '") + name + "' must be >= " + std::to_string(lo));
            auto& f = field(c);
            f = static_cast<std::remove_reference_t<decltype(f)>>(v);
          },
          [=](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Key real(const char* name, const char* doc, Get field) {
  return {name, Kind::real, doc, [=](RunConfig& c, const toml::node& n) { field(c) = as_real(n, name); },
          [=](const RunConfig& c) { return fmt_real(field(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Key boolean(const char* name, const char* doc, Get field) {
  return {name, Kind::boolean, doc, [=](RunConfig& c, const toml::node& n) { field(c) = as_bool(n, name); },
          [=](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Get>
Key string(const char* name, const char* doc, Get field) {
  return {name, Kind::string, doc, [=](RunConfig& c, const toml::node& n) { field(c) = as_string(n, name); },
          [=](const RunConfig& c) { return fmt_string(field(const_cast<RunConfig&>(c))); }};
}

inline NetworkKind g1_kind(const std::string& v) {
  if (v == "unet") return NetworkKind::g1_unet;
  if (v == "encdec") return NetworkKind::g1_encdec;
  throw ValidationError("g1_variant must be 'unet' or 'encdec', got '" + v + "'");
}

inline const std::vector<Key>& keys() {
  using C = RunConfig;
  static const std::vector<Key> k = {
      // data
      string("corpus_dir", "directory of paired images", [](C& c) -> auto& { return c.corpus_dir; }),
      string("manifest", "JSON split manifest or CSV corpus list (overrides corpus_dir)",
             [](C& c) -> auto& { return c.manifest; }),
      string("visible_suffix", "filename stem suffix of visible images", [](C& c) -> auto& { return c.visible_suffix; }),
      string("infrared_suffix", "filename stem suffix of infrared images",
             [](C& c) -> auto& { return c.infrared_suffix; }),
      integer("val_count", "validation pairs held out before augmentation", 0,
              [](C& c) -> auto& { return c.val_count; }),
      integer("train_count", "training pool size; 0 = rest of the corpus", 0, [](C& c) -> auto& { return c.train_count; }),
      integer("augmentation_factor", "training set size as a multiple of the pool", 1,
              [](C& c) -> auto& { return c.augmentation_factor; }),
      integer("augmented_train_count", "exact augmented training set size; 0 = use augmentation_factor", 0,
              [](C& c) -> auto& { return c.augmented_train_count; }),
      integer("transfer_val_count", "validation pairs for the transfer corpus", 0,
              [](C& c) -> auto& { return c.transfer_val_count; }),
      integer("transfer_augmented_train_count", "augmented transfer training set size; 0 = use augmentation_factor",
              0, [](C& c) -> auto& { return c.transfer_augmented_train_count; }),
      integer("image_size", "training resolution (square); 0 keeps native size", 0,
              [](C& c) -> auto& { return c.training.image_size; }),
      // training
      integer("seed", "seed for initialization, splits, augmentation and batch order", 0,
              [](C& c) -> auto& { return c.training.seed; }),
      integer("batch_size", "pairs per step", 1, [](C& c) -> auto& { return c.training.batch_size; }),
      integer("epochs", "passes over the augmented training set", 0, [](C& c) -> auto& { return c.training.epochs; }),
      real("lr_generators", "Adam learning rate of G1 and G2", [](C& c) -> auto& { return c.training.lr_generators; }),
      real("lr_discriminators", "Adam learning rate of D1 and D2",
           [](C& c) -> auto& { return c.training.lr_discriminators; }),
      integer("d_update_period", "generator steps per discriminator step", 1,
              [](C& c) -> auto& { return c.training.d_update_period; }),
      integer("checkpoint_every", "steps between checkpoints; 0 = final only", 0,
              [](C& c) -> auto& { return c.training.checkpoint_every; }),
      Key{"max_steps", Kind::integer, "stop after this many steps; 0 = no limit",
          [](C& c, const toml::node& n) {
            const auto v = as_int(n, "max_steps");
            if (v < 0) throw ValidationError("config key 'max_steps' must be >= 0");
            c.training.max_steps = v == 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(v));
          },
          [](const C& c) { return std::to_string(c.training.max_steps.value_or(0)); }},
      boolean("validate_each_epoch", "score the validation set after every epoch",
              [](C& c) -> auto& { return c.training.validate_each_epoch; }),
      integer("transfer_epochs", "epochs of the transfer phase", 0, [](C& c) -> auto& { return c.training.transfer_epochs; }),
      real("transfer_gamma", "gamma of the transfer phase", [](C& c) -> auto& { return c.training.transfer_gamma; }),
      // losses
      real("gamma", "weight of the D1 adversarial term of the G2 loss",
           [](C& c) -> auto& { return c.training.weights.gamma; }),
      real("lambda", "content term weight", [](C& c) -> auto& { return c.training.weights.lambda; }),
      real("xi", "gradient term weight inside the content term", [](C& c) -> auto& { return c.training.weights.xi; }),
      real("c1_label", "G2 target for D1 scores", [](C& c) -> auto& { return c.training.weights.c1_label; }),
      real("c2_label", "G2 target for D2 scores", [](C& c) -> auto& { return c.training.weights.c2_label; }),
      real("fake_label", "discriminator label of generated inputs", [](C& c) -> auto& { return c.training.weights.a_label; }),
      real("d1_real_label", "D1 label of real visible inputs", [](C& c) -> auto& { return c.training.weights.d1_real_label; }),
      real("d2_real_label", "D2 label of real infrared inputs", [](C& c) -> auto& { return c.training.weights.d2_real_label; }),
      real("g1_adv_weight", "weight of the adversarial term of the G1 loss",
           [](C& c) -> auto& { return c.training.weights.g1_adv_weight; }),
      boolean("content_per_channel", "normalize content sums by H*W*C (false: H*W)",
              [](C& c) -> auto& { return c.training.weights.content_per_channel; }),
      Key{"gradient_operator", Kind::string, "laplacian or sobel",
          [](C& c, const toml::node& n) {
            c.training.weights.gradient_operator = parse_gradient_operator(as_string(n, "gradient_operator"));
          },
          [](const C& c) { return fmt_string(gradient_operator_name(c.training.weights.gradient_operator)); }},
      // model
      Key{"g1_variant", Kind::string, "unet or encdec",
          [](C& c, const toml::node& n) { c.models.g1.kind = g1_kind(as_string(n, "g1_variant")); },
          [](const C& c) { return fmt_string(c.models.g1.kind == NetworkKind::g1_unet ? "unet" : "encdec"); }},
      integer("g1_depth", "G1 down/up-sampling stages", 1, [](C& c) -> auto& { return c.models.g1.depth; }),
      integer("g1_base_filters", "G1 first-stage filters", 1, [](C& c) -> auto& { return c.models.g1.base_filters; }),
      integer("g1_kernel_size", "G1 kernel size (even)", 2, [](C& c) -> auto& { return c.models.g1.kernel_size; }),
      integer("g2_depth", "G2 hidden layers", 1, [](C& c) -> auto& { return c.models.g2.depth; }),
      integer("g2_base_filters", "G2 last hidden layer filters", 1, [](C& c) -> auto& { return c.models.g2.base_filters; }),
      integer("g2_kernel_size", "G2 leading kernel size (odd)", 1, [](C& c) -> auto& { return c.models.g2.kernel_size; }),
      integer("d_depth", "discriminator stride-2 layers", 1, [](C& c) -> auto& { return c.models.d.depth; }),
      integer("d_base_filters", "discriminator first-layer filters", 1, [](C& c) -> auto& { return c.models.d.base_filters; }),
      integer("d_kernel_size", "discriminator kernel size", 1, [](C& c) -> auto& { return c.models.d.kernel_size; }),
      boolean("d_spectral_norm", "spectral normalization in both discriminators",
              [](C& c) -> auto& { return c.models.d.use_spectral_norm; }),
      // metrics
      integer("entropy_levels", "histogram bins of EN", 2, [](C& c) -> auto& { return c.metrics.entropy_levels; }),
      real("psnr_max", "peak value of PSNR", [](C& c) -> auto& { return c.metrics.psnr_max; }),
      real("ssim_alpha", "SSIM luminance exponent", [](C& c) -> auto& { return c.metrics.ssim_alpha; }),
      real("ssim_beta", "SSIM contrast exponent", [](C& c) -> auto& { return c.metrics.ssim_beta; }),
      real("ssim_gamma", "SSIM structure exponent", [](C& c) -> auto& { return c.metrics.ssim_gamma; }),
      Key{"ssim_c1", Kind::real, "SSIM luminance constant (default (0.01 psnr_max)^2)",
          [](C& c, const toml::node& n) { c.metrics.ssim_c1 = as_real(n, "ssim_c1"); },
          [](const C& c) { return fmt_real(c.metrics.c1()); }},
      Key{"ssim_c2", Kind::real, "SSIM contrast constant (default (0.03 psnr_max)^2)",
          [](C& c, const toml::node& n) { c.metrics.ssim_c2 = as_real(n, "ssim_c2"); },
          [](const C& c) { return fmt_real(c.metrics.c2()); }},
      Key{"ssim_c3", Kind::real, "SSIM structure constant (default ssim_c2 / 2)",
          [](C& c, const toml::node& n) { c.metrics.ssim_c3 = as_real(n, "ssim_c3"); },
          [](const C& c) { return fmt_real(c.metrics.c3()); }},
      integer("ssim_window", "SSIM window side in pixels (odd)", 3, [](C& c) -> auto& { return c.metrics.ssim_window; }),
      Key{"channel_mode", Kind::string, "per_channel or luma",
          [](C& c, const toml::node& n) { c.metrics.channel_mode = metrics::parse_channel_mode(as_string(n, "channel_mode")); },
          [](const C& c) { return fmt_string(metrics::channel_mode_name(c.metrics.channel_mode)); }},
      // paths
      string("output_dir", "directory for checkpoints, logs and reports", [](C& c) -> auto& { return c.output_dir; }),
      string("checkpoint", "training-state checkpoint to start from or evaluate",
             [](C& c) -> auto& { return c.checkpoint; }),
      string("eval_split", "manifest subset scored by evaluate: train, val or all",
             [](C& c) -> auto& { return c.eval_split; }),
  };
  return k;
}

inline const Key& find_key(const std::string& name) {
  for (const auto& k : keys())
    if (name == k.name) return k;
  throw ValidationError("unknown config key '" + name + "'");
}

}  // namespace detail

inline std::vector<std::string> key_names() {
  std::vector<std::string> out;
  for (const auto& k : detail::keys()) out.emplace_back(k.name);
  return out;
}

// Applies every key of a parsed table on top of `cfg`.
inline void apply_table(RunConfig& cfg, const toml::table& table, const std::string& origin) {
  for (const auto& [key, node] : table) {
    const std::string name(key.str());
    if (node.is_table() || node.is_array())
      throw ValidationError(origin + ": config key '" + name + "' must be a scalar (the schema is flat)");
    try {
      detail::find_key(name).set(cfg, node);
    } catch (const ValidationError& e) {
      const auto line = node.source().begin.line;
      throw ValidationError(origin + (line ? ":" + std::to_string(line) : std::string()) + ": " + e.what());
    }
  }
}

inline void apply_text(RunConfig& cfg, std::string_view text, const std::string& origin) {
  try {
    apply_table(cfg, toml::parse(text, origin), origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ':' << e.source().begin.line << ": " << e.description();
    throw ValidationError(os.str());
  }
}

inline void apply_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  apply_text(cfg, buf.str(), path.string());
}

// "key=value" with a TOML value; bare words are taken as strings.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not of the form key=value");
  std::string key = assignment.substr(0, eq), value = assignment.substr(eq + 1);
  auto trim = [](std::string& s) {
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
  };
  trim(key);
  trim(value);
  const auto& k = detail::find_key(key);
  if (k.kind == detail::Kind::string && (value.empty() || (value.front() != '"' && value.front() != '\'')))
    value = detail::fmt_string(value);
  apply_text(cfg, key + " = " + value, "--set " + key);
}

inline RunConfig load(const std::optional<fs::path>& file, const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;
  if (file) apply_file(cfg, *file);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

// Every key with its resolved value, one per line, in schema order.
inline std::string to_toml(const RunConfig& cfg) {
  std::ostringstream os;
  os << "# resolved firegan configuration\n";
  for (const auto& k : detail::keys()) os << "# " << k.doc << '\n' << k.name << " = " << k.get(cfg) << '\n';
  return os.str();
}

inline void write_resolved(const RunConfig& cfg, const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_toml(cfg);
}

}  // namespace firegan::config
