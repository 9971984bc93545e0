#pragma once

// Command-line front end: train, transfer, infer, evaluate, compare and
// make-splits behind one executable. Exit codes: 0 success, 1 invalid
// configuration or input, 2 runtime failure.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "firegan/config.hpp"
#include "firegan/data.hpp"
#include "firegan/evaluation.hpp"
#include "firegan/io.hpp"
#include "firegan/log.hpp"
#include "firegan/training.hpp"

namespace firegan::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct GlobalOptions {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  bool verbose = false;
  std::vector<std::string> overrides;
};

// Training corpus split into an (augmented) training source and a validation set.
struct TrainingData {
  std::unique_ptr<data::AugmentationPlan> train;
  std::vector<ImagePair> val;
  std::size_t pool_size = 0;
};

inline TrainingData load_training_data(const config::RunConfig& cfg, bool transfer) {
  std::vector<data::CorpusEntry> train_entries, val_entries;
  const auto spec = cfg.split_spec(transfer);
  std::vector<data::CorpusEntry> all;
  if (!cfg.manifest.empty()) {
    const auto m = data::read_manifest(cfg.manifest);
    if (!m.train_ids.empty() || !m.val_ids.empty()) {
      train_entries = m.select("train");
      val_entries = m.select("val");
    } else {
      all = m.entries;
    }
  } else if (!cfg.corpus_dir.empty()) {
    all = data::scan_corpus(cfg.corpus_dir, cfg.pairing());
  } else {
    throw ValidationError("no training data: set corpus_dir or manifest");
  }
  if (!all.empty()) {
    auto parts = data::split(std::move(all), spec);
    train_entries = std::move(parts.train);
    val_entries = std::move(parts.val);
  }
  if (train_entries.empty()) throw ValidationError("the training split is empty");

  TrainingData out;
  auto pool = data::load_pairs(train_entries);
  for (auto& p : pool) p.lineage = Lineage::train;
  out.val = data::load_pairs(val_entries);
  for (auto& p : out.val) p.lineage = Lineage::val;
  out.pool_size = pool.size();
  const std::size_t target = spec.augmented_size(pool.size());
  out.train = std::make_unique<data::AugmentationPlan>(std::move(pool), target,
                                                       derive_seed(cfg.training.seed, 0xA116));
  return out;
}

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline std::string run_header(const char* what, const TrainingConfig& t) {
  return std::string(what) + ": batch_size " + std::to_string(t.batch_size) + ", epochs " +
         std::to_string(t.epochs) + ", lr_generators " + num(t.lr_generators) + ", lr_discriminators " +
         num(t.lr_discriminators) + ", d_update_period " + std::to_string(t.d_update_period) + ", gamma " +
         num(t.weights.gamma) + ", seed " + std::to_string(t.seed);
}

// Pair job argument "name=path" or "path".
inline std::pair<std::string, std::string> job_arg(const std::string& s, std::size_t index) {
  const auto eq = s.find('=');
  if (eq != std::string::npos && eq > 0) return {s.substr(0, eq), s.substr(eq + 1)};
  std::string name = fs::path(s).filename().string();
  if (name.empty() || name == "final") name = "job" + std::to_string(index + 1);
  return {name, s};
}

inline std::string ir_table(const metrics::PairRecord& r, std::size_t n) {
  std::ostringstream os;
  os << "Generated IR vs real IR (" << n << " items)\n";
  for (const char* l : metrics::kPairLabels) os << std::left << std::setw(10) << l;
  os << '\n';
  for (const auto& v : r.values) {
    std::string cell = "error";
    if (v) {
      std::ostringstream c;
      if (std::isinf(*v)) c << "inf";
      else c << std::fixed << std::setprecision(4) << *v;
      cell = c.str();
    }
    os << std::left << std::setw(10) << cell;
  }
  os << '\n';
  return os.str();
}

struct InferItem {
  std::string id;
  fs::path visible;
  std::optional<fs::path> infrared;
};

inline std::vector<InferItem> scan_infer_inputs(const fs::path& dir, const data::PairingRule& rule) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && io::is_raster_extension(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  std::map<std::string, fs::path> ir;
  for (const auto& f : files) {
    const auto stem = f.stem().string();
    if (ends_with(stem, rule.infrared_suffix)) ir.emplace(stem.substr(0, stem.size() - rule.infrared_suffix.size()), f);
  }
  std::vector<InferItem> out;
  for (const auto& f : files) {
    const auto stem = f.stem().string();
    if (ends_with(stem, rule.infrared_suffix)) continue;
    InferItem item;
    item.visible = f;
    item.id = ends_with(stem, rule.visible_suffix) ? stem.substr(0, stem.size() - rule.visible_suffix.size()) : stem;
    if (auto it = ir.find(item.id); it != ir.end()) item.infrared = it->second;
    out.push_back(std::move(item));
  }
  return out;
}

inline void require_checkpoint(const std::string& path) {
  if (path.empty()) throw ValidationError("no checkpoint given (use --checkpoint or the checkpoint key)");
  if (!fs::is_directory(path)) throw ValidationError("checkpoint not found: " + path);
}

}  // namespace detail

// --- commands ---------------------------------------------------------------

inline int cmd_train(config::RunConfig cfg, const GlobalOptions& g, std::optional<std::string> resume,
                     std::ostream& out) {
  if (resume) cfg.training.resume_from = *resume;
  cfg.validate();
  TrainingConfig t = cfg.training;
  t.val_metrics = cfg.metrics;
  t.output_dir = cfg.output_dir;
  if (g.dry_run) {
    t.max_steps = 1;
    t.validate_each_epoch = false;
    t.output_dir.clear();
    t.epochs = std::max(t.epochs, 1);
  }
  if (t.resume_from && !fs::is_directory(*t.resume_from))
    throw ValidationError("checkpoint not found: " + t.resume_from->string());
  auto d = load_training_data(cfg, false);
  out << detail::run_header("train", t) << '\n';
  out << "data: " << d.pool_size << " training pairs (" << d.train->size() << " after augmentation), "
      << d.val.size() << " validation pairs\n";
  if (!t.output_dir.empty()) config::write_resolved(cfg, t.output_dir / "resolved_config.toml");
  auto state = t.resume_from ? load_state<float>(*t.resume_from) : TrainState<float>::create(cfg.models, t);
  const auto r = fit(state, *d.train, d.val, t);
  out << "steps: " << r.steps_run << " (total " << state.step << "), discriminator updates: " << state.d_updates
      << '\n';
  if (g.dry_run) out << "dry run ok\n";
  if (r.final_checkpoint) out << "checkpoint: " << r.final_checkpoint->string() << '\n';
  return kExitOk;
}

inline int cmd_transfer(config::RunConfig cfg, const GlobalOptions& g, std::ostream& out) {
  cfg.validate();
  detail::require_checkpoint(cfg.checkpoint);
  TrainingConfig t = cfg.training.for_transfer();
  t.val_metrics = cfg.metrics;
  t.output_dir = cfg.output_dir;
  if (g.dry_run) {
    t.max_steps = 1;
    t.validate_each_epoch = false;
    t.output_dir.clear();
    t.epochs = std::max(t.epochs, 1);
  }
  auto d = load_training_data(cfg, true);
  out << detail::run_header("transfer", t) << '\n';
  out << "data: " << d.pool_size << " training pairs (" << d.train->size() << " after augmentation), "
      << d.val.size() << " validation pairs\n";
  if (!t.output_dir.empty()) config::write_resolved(cfg, t.output_dir / "resolved_config.toml");
  auto state = load_state<float>(cfg.checkpoint);
  const auto r = transfer_learn(state, *d.train, d.val, t);
  out << "steps: " << r.steps_run << ", discriminator updates: " << state.d_updates << '\n';
  if (g.dry_run) out << "dry run ok\n";
  if (r.final_checkpoint) out << "checkpoint: " << r.final_checkpoint->string() << '\n';
  return kExitOk;
}

inline int cmd_infer(const config::RunConfig& cfg, const std::string& input, const std::string& output,
                     const std::string& mode, std::ostream& out) {
  if (mode != "ir_only" && mode != "fused" && mode != "both")
    throw ValidationError("mode must be ir_only, fused or both");
  detail::require_checkpoint(cfg.checkpoint);
  if (!fs::is_directory(input)) throw ValidationError("input directory not found: " + input);
  auto items = detail::scan_infer_inputs(input, cfg.pairing());
  if (items.empty()) {
    log::warn("no input images in " + input);
    out << "0 images written\n";
    return kExitOk;
  }
  auto g1 = checkpoint::load_network<float>(fs::path(cfg.checkpoint) / "g1");
  auto g2 = checkpoint::load_network<float>(fs::path(cfg.checkpoint) / "g2");
  std::size_t written = 0, skipped = 0;
  for (const auto& item : items) {
    try {
      const Image vis = to_model_domain(replicate_to_rgb(io::read_image(item.visible)));
      std::optional<Image> gen;
      if (mode != "fused" || !item.infrared) gen = generate_ir(g1, vis);
      if (mode != "fused") {
        io::write_image(fs::path(output) / (item.id + "_genir.png"), *gen);
        ++written;
      }
      if (mode != "ir_only") {
        Image ir = gen ? *gen : Image();
        if (item.infrared) {
          ir = to_model_domain(replicate_to_rgb(io::read_image(*item.infrared)));
          if (ir.height() != vis.height() || ir.width() != vis.width())
            throw DataError("infrared partner of '" + item.id + "' has different dimensions");
        }
        io::write_image(fs::path(output) / (item.id + "_fused.png"), fuse(g2, vis, ir));
        ++written;
      }
    } catch (const ShapeError& e) {
      log::warn("skipped " + item.visible.string() + ": " + e.what());
      ++skipped;
    }
  }
  out << written << " images written to " << output;
  if (skipped) out << ", " << skipped << " inputs skipped";
  out << '\n';
  return kExitOk;
}

inline int cmd_evaluate(const config::RunConfig& cfg, const std::vector<std::string>& checkpoints,
                        const std::vector<std::string>& fused_dirs, const std::string& output, bool always_compare,
                        std::ostream& out) {
  if (cfg.manifest.empty()) throw ValidationError("evaluation needs a manifest (--manifest or the manifest key)");
  if (!fs::exists(cfg.manifest)) throw ValidationError("manifest not found: " + cfg.manifest);
  std::vector<evaluation::EvalJob> jobs;
  auto base_job = [&] {
    evaluation::EvalJob j;
    j.manifest = cfg.manifest;
    j.split = cfg.eval_split;
    j.params = cfg.metrics;
    j.image_size = cfg.training.image_size;
    return j;
  };
  std::vector<std::string> ckpts = checkpoints;
  if (ckpts.empty() && fused_dirs.empty() && !cfg.checkpoint.empty()) ckpts.push_back(cfg.checkpoint);
  for (const auto& c : ckpts) {
    auto [name, path] = detail::job_arg(c, jobs.size());
    detail::require_checkpoint(path);
    auto j = base_job();
    j.name = name;
    j.checkpoint = path;
    jobs.push_back(std::move(j));
  }
  for (const auto& f : fused_dirs) {
    auto [name, path] = detail::job_arg(f, jobs.size());
    if (!fs::is_directory(path)) throw ValidationError("fused image directory not found: " + path);
    auto j = base_job();
    j.name = name;
    j.fused_dir = path;
    jobs.push_back(std::move(j));
  }
  if (jobs.empty()) throw ValidationError("nothing to evaluate: give --checkpoint or --fused-dir");
  // Evaluating the same split of the same manifest guarantees the shared-corpus precondition.
  if (jobs.size() == 1 && !always_compare) {
    auto job = jobs.front();
    job.output_dir = output;
    const auto r = evaluation::run_eval(job);
    out << "evaluated " << r.items.size() << " items";
    if (!r.excluded.empty()) out << ", " << r.excluded.size() << " excluded";
    out << '\n';
    if (r.genir_aggregate) out << detail::ir_table(*r.genir_aggregate, r.genir_items.size()) << '\n';
    out << evaluation::compare_results({r}).text();
    return kExitOk;
  }
  const auto table = evaluation::compare_runs(jobs, output);
  out << table.text();
  return kExitOk;
}

inline int cmd_make_splits(const config::RunConfig& cfg, const std::string& output, bool transfer,
                           std::ostream& out) {
  std::vector<data::CorpusEntry> entries;
  if (!cfg.manifest.empty()) entries = data::read_manifest(cfg.manifest).entries;
  else if (!cfg.corpus_dir.empty()) entries = data::scan_corpus(cfg.corpus_dir, cfg.pairing());
  else throw ValidationError("make-splits needs corpus_dir or manifest");
  const auto spec = cfg.split_spec(transfer);
  auto parts = data::split(entries, spec);
  data::SplitManifest m;
  m.seed = spec.seed;
  m.entries = entries;
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& e : parts.train) m.train_ids.push_back(e.id);
  for (const auto& e : parts.val) m.val_ids.push_back(e.id);
  const fs::path path = output.empty() ? fs::path(cfg.output_dir) / "splits.json" : fs::path(output);
  data::write_split_manifest(path, m);
  out << entries.size() << " pairs: train " << m.train_ids.size() << " (" << spec.augmented_size(m.train_ids.size())
      << " after augmentation), val " << m.val_ids.size() << "\nmanifest: " << path.string() << '\n';
  return kExitOk;
}

// --- entry point ---------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Visible-infrared image fusion with a two-generator GAN", "firegan"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "TOML configuration file");
  app.add_option("--seed", g.seed, "override the configured seed");
  app.add_flag("--dry-run", g.dry_run, "validate config and data, run one step, write nothing");
  app.add_flag("--verbose", g.verbose, "debug logging");
  app.add_option("--set", g.overrides, "override a config key (key=value), repeatable");

  std::optional<std::string> resume, checkpoint, corpus, manifest, output_dir, split;
  std::optional<int> epochs, image_size;
  auto* train = app.add_subcommand("train", "train all four networks from scratch or resume");
  train->add_option("--corpus", corpus, "corpus directory");
  train->add_option("--manifest", manifest, "split manifest (JSON) or corpus list (CSV)");
  train->add_option("--output", output_dir, "run directory");
  train->add_option("--resume", resume, "training-state checkpoint to resume");
  train->add_option("--epochs", epochs, "override epochs");

  auto* transfer = app.add_subcommand("transfer", "continue a pretrained model on a new corpus");
  transfer->add_option("--checkpoint", checkpoint, "pretrained training-state checkpoint");
  transfer->add_option("--corpus", corpus, "corpus directory");
  transfer->add_option("--manifest", manifest, "split manifest (JSON) or corpus list (CSV)");
  transfer->add_option("--output", output_dir, "run directory");
  transfer->add_option("--epochs", epochs, "override transfer_epochs");

  std::string infer_input, infer_output, infer_mode = "both";
  auto* infer = app.add_subcommand("infer", "write generated IR and/or fused images");
  infer->add_option("--checkpoint", checkpoint, "training-state checkpoint");
  infer->add_option("--input", infer_input, "directory of visible images (optionally with IR partners)")->required();
  infer->add_option("--output", infer_output, "output directory")->required();
  infer->add_option("--mode", infer_mode, "ir_only, fused or both")->check(CLI::IsMember({"ir_only", "fused", "both"}));

  std::vector<std::string> eval_ckpts, eval_fused;
  std::string eval_output;
  auto add_eval_options = [&](CLI::App* sub) {
    sub->add_option("--manifest", manifest, "corpus manifest");
    sub->add_option("--split", split, "train, val or all");
    sub->add_option("--checkpoint", eval_ckpts, "[name=]checkpoint directory, repeatable");
    sub->add_option("--fused-dir", eval_fused, "[name=]directory of fused images, repeatable");
    sub->add_option("--output", eval_output, "report directory");
    sub->add_option("--image-size", image_size, "resize before checkpoint inference (0 = native)");
  };
  auto* evaluate = app.add_subcommand("evaluate", "score fusion outputs against a manifest");
  add_eval_options(evaluate);
  auto* compare = app.add_subcommand("compare", "score several jobs side by side");
  add_eval_options(compare);

  std::string splits_output;
  bool splits_transfer = false;
  auto* make_splits = app.add_subcommand("make-splits", "write a seeded train/validation split manifest");
  make_splits->add_option("--corpus", corpus, "corpus directory");
  make_splits->add_option("--manifest", manifest, "CSV corpus list");
  make_splits->add_option("--output", splits_output, "manifest path (default <output_dir>/splits.json)");
  make_splits->add_flag("--transfer", splits_transfer, "use the transfer validation size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  log::set_level(g.verbose ? log::Level::debug : log::Level::info);
  try {
    auto overrides = g.overrides;
    if (g.seed) overrides.push_back("seed=" + std::to_string(*g.seed));
    if (corpus) overrides.push_back("corpus_dir=" + config::detail::fmt_string(*corpus));
    if (manifest) overrides.push_back("manifest=" + config::detail::fmt_string(*manifest));
    if (output_dir) overrides.push_back("output_dir=" + config::detail::fmt_string(*output_dir));
    if (checkpoint) overrides.push_back("checkpoint=" + config::detail::fmt_string(*checkpoint));
    if (split) overrides.push_back("eval_split=" + config::detail::fmt_string(*split));
    if (image_size) overrides.push_back("image_size=" + std::to_string(*image_size));
    if (epochs) overrides.push_back(std::string(transfer->parsed() ? "transfer_epochs=" : "epochs=") +
                                    std::to_string(*epochs));
    const auto cfg = config::load(g.config ? std::optional<fs::path>(*g.config) : std::nullopt, overrides);

    if (train->parsed()) return cmd_train(cfg, g, resume, out);
    if (transfer->parsed()) return cmd_transfer(cfg, g, out);
    if (infer->parsed()) return cmd_infer(cfg, infer_input, infer_output, infer_mode, out);
    if (evaluate->parsed()) return cmd_evaluate(cfg, eval_ckpts, eval_fused, eval_output, false, out);
    if (compare->parsed()) return cmd_evaluate(cfg, eval_ckpts, eval_fused, eval_output, true, out);
    if (make_splits->parsed()) return cmd_make_splits(cfg, splits_output, splits_transfer, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace firegan::cli
