#pragma once

// Adversarial training loop. One step updates G1, then G2 (on G1's detached
// output), then, every d_update_period steps, D1 and D2. Batch order is a
// per-epoch permutation derived from (seed, epoch), so a run resumed from a
// checkpoint replays exactly the batches an uninterrupted run would see.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>

#include "firegan/checkpoint.hpp"
#include "firegan/data.hpp"
#include "firegan/log.hpp"
#include "firegan/losses.hpp"
#include "firegan/metrics.hpp"
#include "firegan/model.hpp"
#include "firegan/optim.hpp"

namespace firegan {

struct ModelConfig {
  NetworkSpec g1 = NetworkSpec::g1(true);
  NetworkSpec g2 = NetworkSpec::g2();
  NetworkSpec d = NetworkSpec::discriminator();

  void validate() const {
    if (!is_g1(g1.kind)) throw ValidationError("g1 spec must be g1_encdec or g1_unet");
    if (g2.kind != NetworkKind::g2) throw ValidationError("g2 spec must have kind g2");
    if (d.kind != NetworkKind::discriminator)
      throw ValidationError("discriminator spec must have kind discriminator");
    g1.validate();
    g2.validate();
    d.validate();
  }
};

struct TrainingConfig {
  int batch_size = 4;
  int epochs = 40;
  double lr_generators = 5e-5;
  double lr_discriminators = 1e-4;
  int d_update_period = 2;
  LossWeights weights;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // steps; 0 writes only the final checkpoint
  std::optional<std::filesystem::path> resume_from;
  std::optional<std::size_t> max_steps;  // stop after this many global steps
  int image_size = 256;                  // pairs are resized to image_size^2; 0 keeps them as is
  int transfer_epochs = 3;
  double transfer_gamma = 4.5;
  bool validate_each_epoch = true;
  metrics::MetricParams val_metrics;
  std::filesystem::path output_dir;  // empty: no files are written

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (!(lr_generators > 0)) throw ValidationError("lr_generators must be positive");
    if (!(lr_discriminators > 0)) throw ValidationError("lr_discriminators must be positive");
    if (d_update_period < 1) throw ValidationError("d_update_period must be >= 1");
    if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
    if (image_size < 0) throw ValidationError("image_size must be >= 0");
    if (transfer_epochs < 0) throw ValidationError("transfer_epochs must be >= 0");
    if (!(transfer_gamma > 0)) throw ValidationError("transfer_gamma must be positive");
    weights.validate();
    val_metrics.validate();
  }

  // Same settings with the transfer-phase epoch count and gamma.
  TrainingConfig for_transfer() const {
    TrainingConfig c = *this;
    c.epochs = transfer_epochs;
    c.weights.gamma = transfer_gamma;
    return c;
  }
};

template <typename T>
struct Optimizers {
  Adam<T> g1, g2, d1, d2;
};

// Generators get lr_generators, discriminators lr_discriminators.
template <typename T>
Optimizers<T> make_optimizers(const TrainingConfig& cfg, const Network<T>& g1, const Network<T>& g2,
                              const Network<T>& d1, const Network<T>& d2) {
  if (!(cfg.lr_generators > 0)) throw ValidationError("lr_generators must be positive");
  if (!(cfg.lr_discriminators > 0)) throw ValidationError("lr_discriminators must be positive");
  if (cfg.lr_generators == cfg.lr_discriminators)
    log::warn("lr_generators == lr_discriminators: two time-scale updates are disabled");
  const AdamParams g{cfg.lr_generators}, d{cfg.lr_discriminators};
  return {Adam<T>(g1.named_parameters(), g), Adam<T>(g2.named_parameters(), g),
          Adam<T>(d1.named_parameters(), d), Adam<T>(d2.named_parameters(), d)};
}

template <typename T = float>
struct TrainState {
  Network<T> g1, g2, d1, d2;
  Optimizers<T> opt;
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t d_updates = 0;
  std::uint64_t seed = 0;

  static TrainState create(const ModelConfig& models, const TrainingConfig& cfg) {
    models.validate();
    cfg.validate();
    Network<T> g1(models.g1, derive_seed(cfg.seed, 101));
    Network<T> g2(models.g2, derive_seed(cfg.seed, 102));
    Network<T> d1(models.d, derive_seed(cfg.seed, 103));
    Network<T> d2(models.d, derive_seed(cfg.seed, 104));
    auto opt = make_optimizers(cfg, g1, g2, d1, d2);
    return TrainState{std::move(g1), std::move(g2), std::move(d1), std::move(d2), std::move(opt), 0, 0, 0,
                      cfg.seed};
  }

  ModelConfig models() const { return {g1.spec(), g2.spec(), d1.spec()}; }
};

// --- state checkpoints -------------------------------------------------------

namespace detail {

template <typename T>
void save_adam(const std::filesystem::path& dir, Adam<T>& a) {
  std::vector<std::pair<std::string, const Tensor<T>*>> items;
  for (auto& [name, t] : a.named_state()) items.emplace_back(name, t);
  checkpoint::save_tensors<T>(dir, items);
}

template <typename T>
void load_adam(const std::filesystem::path& dir, Adam<T>& a, std::size_t steps) {
  auto arrays = checkpoint::load_tensors<T>(dir);
  for (auto& [name, t] : a.named_state()) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError(dir.string() + ": missing optimizer array '" + name + "'");
    if (it->second.shape() != t->shape())
      throw ShapeError(dir.string() + ": optimizer array '" + name + "' has the wrong shape");
    *t = std::move(it->second);
  }
  a.set_steps(steps);
}

}  // namespace detail

// Directory layout: state.json, g1/ g2/ d1/ d2/ (network checkpoints) and
// optim_g1/ ... optim_d2/ (Adam moments).
template <typename T>
void save_state(const std::filesystem::path& dir, TrainState<T>& s) {
  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  checkpoint::save_network(tmp / "g1", s.g1);
  checkpoint::save_network(tmp / "g2", s.g2);
  checkpoint::save_network(tmp / "d1", s.d1);
  checkpoint::save_network(tmp / "d2", s.d2);
  detail::save_adam(tmp / "optim_g1", s.opt.g1);
  detail::save_adam(tmp / "optim_g2", s.opt.g2);
  detail::save_adam(tmp / "optim_d1", s.opt.d1);
  detail::save_adam(tmp / "optim_d2", s.opt.d2);
  checkpoint::json j = {{"step", s.step},
                        {"epoch", s.epoch},
                        {"d_updates", s.d_updates},
                        {"seed", s.seed},
                        {"dtype", checkpoint::dtype_name<T>()},
                        {"optimizer",
                         {{"g1", {{"lr", s.opt.g1.lr()}, {"t", s.opt.g1.steps()}}},
                          {"g2", {{"lr", s.opt.g2.lr()}, {"t", s.opt.g2.steps()}}},
                          {"d1", {{"lr", s.opt.d1.lr()}, {"t", s.opt.d1.steps()}}},
                          {"d2", {{"lr", s.opt.d2.lr()}, {"t", s.opt.d2.steps()}}}}}};
  checkpoint::write_json(tmp / "state.json", j);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

// Restores networks, optimizer moments and counters. The stored learning
// rates are kept; pass fresh optimizers afterwards to change them.
template <typename T = float>
TrainState<T> load_state(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("checkpoint not found: " + dir.string());
  const auto j = checkpoint::read_json(dir / "state.json");
  TrainState<T> s{checkpoint::load_network<T>(dir / "g1"), checkpoint::load_network<T>(dir / "g2"),
                  checkpoint::load_network<T>(dir / "d1"), checkpoint::load_network<T>(dir / "d2"),
                  {}, 0, 0, 0, 0};
  try {
    s.step = j.at("step").get<std::size_t>();
    s.epoch = j.at("epoch").get<std::size_t>();
    s.d_updates = j.at("d_updates").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    const auto& o = j.at("optimizer");
    auto adam = [&](const char* key, const Network<T>& net) {
      return Adam<T>(net.named_parameters(), AdamParams{o.at(key).at("lr").get<double>()});
    };
    s.opt = {adam("g1", s.g1), adam("g2", s.g2), adam("d1", s.d1), adam("d2", s.d2)};
    detail::load_adam(dir / "optim_g1", s.opt.g1, o.at("g1").at("t").get<std::size_t>());
    detail::load_adam(dir / "optim_g2", s.opt.g2, o.at("g2").at("t").get<std::size_t>());
    detail::load_adam(dir / "optim_d1", s.opt.d1, o.at("d1").at("t").get<std::size_t>());
    detail::load_adam(dir / "optim_d2", s.opt.d2, o.at("d2").at("t").get<std::size_t>());
  } catch (const checkpoint::json::exception& e) {
    throw DataError((dir / "state.json").string() + ": " + e.what());
  }
  return s;
}

// --- one step -----------------------------------------------------------------

template <typename T>
struct Batch {
  Var<T> visible, infrared;  // NCHW, model domain, 3 channels each
};

// Stacks a batch, refusing validation pairs and non-model-domain images.
template <typename T>
Batch<T> make_batch(const std::vector<ImagePair>& pairs) {
  std::vector<const Image*> vis, ir;
  std::vector<Image> ir3;
  ir3.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.lineage == Lineage::val)
      throw DataError("validation pair '" + p.id + "' reached a training batch");
    if (p.visible.domain() != Domain::model_signed || p.infrared.domain() != Domain::model_signed)
      throw DomainError("pair '" + p.id + "' is not in the model domain");
    p.validate();
    ir3.push_back(replicate_to_rgb(p.infrared));
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    vis.push_back(&pairs[i].visible);
    ir.push_back(&ir3[i]);
  }
  return {Var<T>(to_tensor<T>(vis)), Var<T>(to_tensor<T>(ir))};
}

struct StepResult {
  LossReport losses;
  bool d_updated = false;
};

namespace detail {

template <typename T>
void check_term(const Var<T>& v, const char* name, std::size_t step) {
  if (!std::isfinite(v.item()))
    throw NumericError(std::string("non-finite loss term ") + name + " at step " + std::to_string(step));
}

}  // namespace detail

template <typename T>
StepResult train_step(TrainState<T>& s, const std::vector<ImagePair>& pairs, const TrainingConfig& cfg) {
  if (static_cast<int>(pairs.size()) != cfg.batch_size)
    throw ShapeError("train_step: batch of " + std::to_string(pairs.size()) + " pairs, expected " +
                     std::to_string(cfg.batch_size));
  const Batch<T> b = make_batch<T>(pairs);
  const auto& w = cfg.weights;
  const std::size_t n = pairs.size();
  StepResult out;

  // G1: synthesize IR; D2 judges it without updating its own state.
  s.g1.zero_grad();
  s.d2.zero_grad();
  const Var<T> gen_ir = s.g1.forward(b.visible, ForwardOptions::train());
  const auto g1t = losses::g1_loss(s.d2.forward(gen_ir, ForwardOptions::train_frozen()), gen_ir, b.infrared, w);
  detail::check_term(g1t.total, "g1_total", s.step);
  backward(g1t.total);
  s.opt.g1.step();
  out.losses.g1_total = g1t.total.item();

  // G2: fuse visible with the (detached) synthetic IR.
  const Var<T> gen_ir_d = gen_ir.detach();
  s.g2.zero_grad();
  const Var<T> fused = s.g2.forward(ops::concat_channels(b.visible, gen_ir_d), ForwardOptions::train());
  const auto g2t = losses::g2_loss(s.d1.forward(fused, ForwardOptions::train_frozen()),
                                   s.d2.forward(fused, ForwardOptions::train_frozen()), fused, b.infrared,
                                   b.visible, w);
  detail::check_term(g2t.adv_d1, "g2_adv_d1", s.step);
  detail::check_term(g2t.adv_d2, "g2_adv_d2", s.step);
  detail::check_term(g2t.content, "g2_content", s.step);
  backward(g2t.total);
  s.opt.g2.step();
  out.losses.g2_total = g2t.total.item();
  out.losses.g2_adv_d1 = g2t.adv_d1.item();
  out.losses.g2_adv_d2 = g2t.adv_d2.item();
  out.losses.g2_content = g2t.content.item();

  // Discriminators. Each sees real and fake inputs in one forward pass.
  const Var<T> fused_d = fused.detach();
  out.d_updated = s.step % static_cast<std::size_t>(cfg.d_update_period) == 0;
  auto d_losses = [&](const ForwardOptions& opt) {
    const Var<T> s1 = s.d1.forward(ops::concat_batch(b.visible, fused_d), opt);
    const Var<T> s2 = s.d2.forward(ops::concat_batch(ops::concat_batch(b.infrared, gen_ir_d), fused_d), opt);
    const Var<T> l1 = losses::d1_loss(ops::slice_batch(s1, 0, n), ops::slice_batch(s1, n, n), w);
    const Var<T> l2 = losses::d2_loss(ops::slice_batch(s2, 0, n), ops::slice_batch(s2, n, n),
                                      ops::slice_batch(s2, 2 * n, n), w);
    return std::pair{l1, l2};
  };
  if (out.d_updated) {
    s.d1.zero_grad();
    s.d2.zero_grad();
    auto [l1, l2] = d_losses(ForwardOptions::train());
    detail::check_term(l1, "d1_total", s.step);
    detail::check_term(l2, "d2_total", s.step);
    backward(l1);
    backward(l2);
    s.opt.d1.step();
    s.opt.d2.step();
    ++s.d_updates;
    out.losses.d1_total = l1.item();
    out.losses.d2_total = l2.item();
  } else {
    NoGradGuard guard;
    auto [l1, l2] = d_losses(ForwardOptions::train_frozen());
    out.losses.d1_total = l1.item();
    out.losses.d2_total = l2.item();
  }
  // Gradients that leaked into the discriminators during the generator steps.
  s.d1.zero_grad();
  s.d2.zero_grad();
  out.losses.check_finite(s.step);
  ++s.step;
  return out;
}

// --- epoch loop -------------------------------------------------------------

// Resized, model-domain, train-tagged copy of a source pair.
inline ImagePair prepare_pair(ImagePair p, int image_size, Lineage lineage) {
  if (image_size > 0) p = data::resize_pair(p, image_size, image_size);
  if (p.visible.domain() == Domain::file_u8) p.visible = to_model_domain(p.visible);
  if (p.infrared.domain() == Domain::file_u8) p.infrared = to_model_domain(p.infrared);
  p.infrared = replicate_to_rgb(p.infrared);
  p.lineage = lineage;
  return p;
}

struct ValidationSummary {
  std::size_t epoch = 0;
  metrics::MetricRecord fused;    // fused vs sources
  metrics::PairRecord generated;  // generated IR vs real IR
};

// Generated IR and fused output for one model-domain visible batch (eval mode).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> infer(TrainState<T>& s, const Var<T>& visible) {
  NoGradGuard guard;
  const Var<T> gen = s.g1.forward(visible, ForwardOptions::eval());
  const Var<T> fused = s.g2.forward(ops::concat_channels(visible, gen), ForwardOptions::eval());
  return {gen.value(), fused.value()};
}

template <typename T>
ValidationSummary validate_epoch(TrainState<T>& s, const std::vector<ImagePair>& val,
                                 const TrainingConfig& cfg) {
  std::vector<metrics::MetricRecord> fused_rows;
  std::vector<metrics::PairRecord> gen_rows;
  for (const auto& raw : val) {
    const ImagePair p = prepare_pair(raw, cfg.image_size, Lineage::val);
    const auto [gen, fused] = infer(s, Var<T>(to_tensor<T>(p.visible)));
    const Image gen_img = from_tensor(gen, 0, Domain::model_signed);
    const Image fused_img = from_tensor(fused, 0, Domain::model_signed);
    fused_rows.push_back(metrics::evaluate_triple(p.visible, p.infrared, fused_img, cfg.val_metrics, p.id));
    gen_rows.push_back(metrics::evaluate_pair(p.infrared, gen_img, cfg.val_metrics, p.id));
  }
  return {s.epoch, metrics::aggregate(fused_rows), metrics::aggregate(gen_rows)};
}

struct FitHooks {
  std::function<void(std::size_t step, const StepResult&)> on_step;
  std::function<void(const ValidationSummary&)> on_validation;
};

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path, const std::string& header, bool append) {
  const bool fresh = !append || !std::filesystem::exists(path);
  std::ofstream out(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh) out << header << '\n';
  return out;
}

inline std::string val_header() {
  std::string h = "epoch,count";
  for (const char* k : metrics::kTripleKeys) h += std::string(",") + k;
  for (const char* k : metrics::kPairKeys) h += std::string(",genir_") + k;
  return h;
}

}  // namespace detail

inline std::filesystem::path step_checkpoint_dir(const std::filesystem::path& out, std::size_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%08zu", step);
  return out / "checkpoints" / name;
}

struct FitResult {
  std::size_t steps_run = 0;
  std::optional<std::filesystem::path> final_checkpoint;
};

// Runs the remaining epochs of `cfg` from the state's (epoch, step).
template <typename T>
FitResult fit(TrainState<T>& s, const data::PairSource& train, const std::vector<ImagePair>& val,
              const TrainingConfig& cfg, const FitHooks& hooks = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  if (train.size() == 0) throw DataError("training set is empty");
  const std::size_t per_epoch = train.size() / bs;
  if (per_epoch == 0)
    throw DataError("training set of " + std::to_string(train.size()) + " pairs is smaller than one batch of " +
                    std::to_string(bs));

  const bool write = !cfg.output_dir.empty();
  std::ofstream loss_csv, val_csv;
  if (write) {
    fs::create_directories(cfg.output_dir);
    const bool resumed = s.step > 0;
    loss_csv = detail::open_csv(cfg.output_dir / "losses.csv", LossReport::csv_header(), resumed);
    val_csv = detail::open_csv(cfg.output_dir / "val_metrics.csv", detail::val_header(), resumed);
  }

  FitResult result;
  auto done = [&] { return cfg.max_steps && s.step >= *cfg.max_steps; };
  log::info("training: " + std::to_string(train.size()) + " pairs, " + std::to_string(per_epoch) +
            " steps/epoch, epochs " + std::to_string(s.epoch) + ".." + std::to_string(cfg.epochs) +
            ", gamma " + std::to_string(cfg.weights.gamma));

  while (s.epoch < static_cast<std::size_t>(cfg.epochs) && !done()) {
    const auto order = permutation(train.size(), derive_seed(s.seed, 0xE0000 + s.epoch));
    for (std::size_t b = 0; b < per_epoch && !done(); ++b) {
      if (s.epoch * per_epoch + b < s.step) continue;  // already trained before a resume
      std::vector<ImagePair> batch;
      batch.reserve(bs);
      for (std::size_t k = 0; k < bs; ++k) {
        ImagePair p = train.at(order[b * bs + k]);
        if (p.lineage == Lineage::val)
          throw DataError("validation pair '" + p.id + "' found in the training source");
        batch.push_back(prepare_pair(std::move(p), cfg.image_size, Lineage::train));
      }
      const std::size_t step = s.step;
      const StepResult r = train_step(s, batch, cfg);
      ++result.steps_run;
      if (write) loss_csv << r.losses.csv_row(step) << '\n' << std::flush;
      if (hooks.on_step) hooks.on_step(step, r);
      log::debug("step " + std::to_string(step) + " g2_total " + std::to_string(r.losses.g2_total));
      if (write && cfg.checkpoint_every > 0 && s.step % static_cast<std::size_t>(cfg.checkpoint_every) == 0)
        save_state(step_checkpoint_dir(cfg.output_dir, s.step), s);
    }
    if (done() && s.step < (s.epoch + 1) * per_epoch) break;  // stopped mid-epoch

    if (cfg.validate_each_epoch && !val.empty()) {
      const ValidationSummary v = validate_epoch(s, val, cfg);
      if (write) {
        val_csv << s.epoch << ',' << val.size();
        for (const auto& x : v.fused.values) val_csv << ',' << metrics::format_value(x);
        for (const auto& x : v.generated.values) val_csv << ',' << metrics::format_value(x);
        val_csv << '\n' << std::flush;
      }
      if (hooks.on_validation) hooks.on_validation(v);
      log::info("epoch " + std::to_string(s.epoch) + " val ssim_ir " +
                metrics::format_value(v.fused.values[metrics::SSIM_IR]));
    }
    ++s.epoch;
  }

  if (write) {
    const fs::path final_dir = cfg.output_dir / "checkpoints" / "final";
    save_state(final_dir, s);
    result.final_checkpoint = final_dir;
  }
  return result;
}

// Continues training pretrained networks on a new corpus with fresh
// optimizers and counters. `cfg` carries the transfer settings (see
// TrainingConfig::for_transfer).
template <typename T>
FitResult transfer_learn(TrainState<T>& s, const data::PairSource& corpus, const std::vector<ImagePair>& val,
                         const TrainingConfig& cfg, const FitHooks& hooks = {}) {
  cfg.validate();
  s.opt = make_optimizers(cfg, s.g1, s.g2, s.d1, s.d2);
  s.step = 0;
  s.epoch = 0;
  s.d_updates = 0;
  s.seed = cfg.seed;
  return fit(s, corpus, val, cfg, hooks);
}

}  // namespace firegan
