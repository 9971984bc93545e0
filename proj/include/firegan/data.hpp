#pragma once

// Paired visible/infrared corpora: discovery, loading, geometric augmentation
// applied identically to both members, seeded splitting, and split manifests.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "firegan/errors.hpp"
#include "firegan/image.hpp"
#include "firegan/io.hpp"
#include "firegan/random.hpp"

namespace firegan::data {

namespace fs = std::filesystem;

struct PairingRule {
  std::string visible_suffix = "_rgb";
  std::string infrared_suffix = "_nir";
};

struct CorpusEntry {
  std::string id;
  fs::path visible;
  fs::path infrared;
};

// Finds every visible/infrared file pair under root. Ids are the shared stem
// with the suffix removed; results are sorted by id.
inline std::vector<CorpusEntry> scan_corpus(const fs::path& root, const PairingRule& rule = {}) {
  if (!fs::is_directory(root)) throw DataError("corpus directory not found: " + root.string());
  std::map<std::string, fs::path> visible, infrared;
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_regular_file() && io::is_raster_extension(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const std::string stem = path.stem().string();
    auto insert = [&](std::map<std::string, fs::path>& into, const std::string& suffix) {
      const std::string id = stem.substr(0, stem.size() - suffix.size());
      if (!into.emplace(id, path).second)
        throw DataError("duplicate file for id '" + id + "': " + path.string());
    };
    if (ends_with(stem, rule.visible_suffix)) {
      insert(visible, rule.visible_suffix);
    } else if (ends_with(stem, rule.infrared_suffix)) {
      insert(infrared, rule.infrared_suffix);
    }
  }
  std::vector<CorpusEntry> out;
  for (const auto& [id, vis] : visible) {
    auto it = infrared.find(id);
    if (it == infrared.end())
      throw DataError("missing infrared partner for '" + id + "' (" + vis.filename().string() + ")");
    out.push_back({id, vis, it->second});
  }
  for (const auto& [id, ir] : infrared)
    if (!visible.count(id))
      throw DataError("missing visible partner for '" + id + "' (" + ir.filename().string() + ")");
  return out;
}

// CSV corpus list with header "id,visible_path,infrared_path". Relative paths
// resolve against the CSV's directory.
inline std::vector<CorpusEntry> read_corpus_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<CorpusEntry> out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!header_seen) {
      header_seen = true;
      if (cells.size() != 3 || cells[0] != "id" || cells[1] != "visible_path" ||
          cells[2] != "infrared_path")
        throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                              ": expected header 'id,visible_path,infrared_path'");
      continue;
    }
    if (cells.size() != 3 || cells[0].empty() || cells[1].empty() || cells[2].empty())
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": expected 3 non-empty fields (id, visible_path, infrared_path)");
    auto resolve = [&](const std::string& p) {
      fs::path q(p);
      return q.is_absolute() ? q : path.parent_path() / q;
    };
    out.push_back({cells[0], resolve(cells[1]), resolve(cells[2])});
  }
  if (!header_seen) throw ValidationError(path.string() + ": empty manifest");
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].id == out[i - 1].id)
      throw ValidationError(path.string() + ": duplicate id '" + out[i].id + "'");
  return out;
}

// Decodes one pair. 1-channel infrared is replicated to 3 channels.
inline ImagePair load_pair(const CorpusEntry& entry) {
  ImagePair pair;
  pair.id = entry.id;
  pair.visible = replicate_to_rgb(io::read_image(entry.visible));
  pair.infrared = replicate_to_rgb(io::read_image(entry.infrared));
  pair.validate();
  return pair;
}

inline std::vector<ImagePair> load_pairs(const std::vector<CorpusEntry>& entries) {
  std::vector<ImagePair> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(load_pair(e));
  return out;
}

inline std::vector<ImagePair> load_corpus(const fs::path& root, const PairingRule& rule = {}) {
  return load_pairs(scan_corpus(root, rule));
}

inline ImagePair resize_pair(const ImagePair& pair, int height, int width) {
  ImagePair out = pair;
  out.visible = io::resize(pair.visible, height, width);
  out.infrared = io::resize(pair.infrared, height, width);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentKind { horizontal_flip, crop, rotate90 };

struct AugmentOp {
  AugmentKind kind = AugmentKind::horizontal_flip;
  double fraction = 1.0;  // crop: side fraction kept, in (0, 1]
  int quarter_turns = 1;  // rotate90: counter-clockwise quarter turns

  static AugmentOp flip() { return {AugmentKind::horizontal_flip, 1.0, 0}; }
  static AugmentOp crop(double fraction) { return {AugmentKind::crop, fraction, 0}; }
  static AugmentOp rotate(int turns = 1) { return {AugmentKind::rotate90, 1.0, turns}; }
};

inline Image flip_horizontal(const Image& img) {
  Image out(img.height(), img.width(), img.channels(), img.domain());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c)
        out.at(y, img.width() - 1 - x, c) = img.at(y, x, c);
  return out;
}

inline Image rotate90(const Image& img, int turns) {
  turns = ((turns % 4) + 4) % 4;
  Image cur = img;
  for (int t = 0; t < turns; ++t) {
    Image next(cur.width(), cur.height(), cur.channels(), cur.domain());
    // Counter-clockwise: (y, x) -> (W - 1 - x, y).
    for (int y = 0; y < cur.height(); ++y)
      for (int x = 0; x < cur.width(); ++x)
        for (int c = 0; c < cur.channels(); ++c)
          next.at(cur.width() - 1 - x, y, c) = cur.at(y, x, c);
    cur = std::move(next);
  }
  return cur;
}

inline Image crop(const Image& img, int y0, int x0, int h, int w) {
  Image out(h, w, img.channels(), img.domain());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

// Applies ops in order to both members with one shared transform. Crops pick
// their offset from the seed and are resized back to the pre-crop size.
inline std::vector<ImagePair> augment(const ImagePair& pair, std::span<const AugmentOp> ops,
                                      std::uint64_t seed) {
  pair.validate();
  ImagePair out = pair;
  Rng rng(seed);
  for (const auto& op : ops) {
    switch (op.kind) {
      case AugmentKind::horizontal_flip:
        out.visible = flip_horizontal(out.visible);
        out.infrared = flip_horizontal(out.infrared);
        break;
      case AugmentKind::rotate90:
        out.visible = rotate90(out.visible, op.quarter_turns);
        out.infrared = rotate90(out.infrared, op.quarter_turns);
        break;
      case AugmentKind::crop: {
        if (!(op.fraction > 0.0 && op.fraction <= 1.0))
          throw ValidationError("crop fraction must be in (0, 1]");
        const int H = out.visible.height(), W = out.visible.width();
        const int ch = static_cast<int>(std::floor(op.fraction * H));
        const int cw = static_cast<int>(std::floor(op.fraction * W));
        if (ch < 1 || cw < 1)
          throw DataError("crop of pair '" + pair.id + "' would be smaller than 1x1 px");
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(H - ch + 1)));
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(W - cw + 1)));
        out.visible = io::resize(crop(out.visible, y0, x0, ch, cw), H, W);
        out.infrared = io::resize(crop(out.infrared, y0, x0, ch, cw), H, W);
        break;
      }
    }
  }
  return {std::move(out)};
}

inline std::vector<ImagePair> augment(const ImagePair& pair, std::initializer_list<AugmentOp> ops,
                                      std::uint64_t seed) {
  return augment(pair, std::span<const AugmentOp>(ops.begin(), ops.size()), seed);
}

// Indexed access to training items; lets the trainer stream large augmented
// sets without materializing them.
class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual std::size_t size() const = 0;
  virtual ImagePair at(std::size_t index) const = 0;
};

class VectorSource final : public PairSource {
 public:
  explicit VectorSource(std::vector<ImagePair> pairs) : pairs_(std::move(pairs)) {}
  std::size_t size() const override { return pairs_.size(); }
  ImagePair at(std::size_t index) const override { return pairs_.at(index); }
  const std::vector<ImagePair>& pairs() const { return pairs_; }

 private:
  std::vector<ImagePair> pairs_;
};

// Enlarges a training pool to target_count items. Item i is pool[i % P];
// items in the first pass are unmodified, later passes apply a random
// flip / quarter-turn / crop combination seeded by (seed, i), so any item can
// be produced independently of the others.
class AugmentationPlan final : public PairSource {
 public:
  AugmentationPlan(std::vector<ImagePair> pool, std::size_t target_count, std::uint64_t seed)
      : pool_(std::move(pool)), target_(target_count), seed_(seed) {
    if (pool_.empty() && target_ > 0) throw DataError("augmentation plan over an empty pool");
    for (const auto& p : pool_)
      if (p.lineage == Lineage::val)
        throw DataError("validation pair '" + p.id + "' cannot be augmented");
  }

  std::size_t size() const override { return target_; }
  std::size_t pool_size() const { return pool_.size(); }

  std::vector<AugmentOp> ops_for(std::size_t index) const {
    if (index < pool_.size()) return {};
    Rng rng(derive_seed(seed_, index));
    std::vector<AugmentOp> ops;
    if (rng.coin()) ops.push_back(AugmentOp::flip());
    const int turns = static_cast<int>(rng.below(4));
    if (turns != 0) ops.push_back(AugmentOp::rotate(turns));
    if (rng.coin()) ops.push_back(AugmentOp::crop(rng.uniform(0.7, 1.0)));
    return ops;
  }

  ImagePair at(std::size_t index) const override {
    if (index >= target_) throw std::out_of_range("augmentation plan index");
    const ImagePair& src = pool_[index % pool_.size()];
    const auto ops = ops_for(index);
    ImagePair out = augment(src, ops, derive_seed(seed_ ^ 0xa5a5a5a5ull, index)).front();
    // Quarter turns swap sides on non-square rasters; restore the pool size.
    out = resize_pair(out, src.visible.height(), src.visible.width());
    if (index >= pool_.size()) out.id = src.id + "#aug" + std::to_string(index / pool_.size());
    out.lineage = Lineage::train;
    return out;
  }

 private:
  std::vector<ImagePair> pool_;
  std::size_t target_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  std::optional<std::size_t> train_count;  // unset: everything not in val
  std::size_t val_count = 0;
  std::size_t augmentation_factor = 1;
  std::optional<std::size_t> augmented_train_count;  // overrides the factor when set
  std::uint64_t seed = 0;

  void validate(std::size_t corpus_size) const {
    if (augmentation_factor < 1) throw ValidationError("augmentation_factor must be >= 1");
    const std::size_t train = train_count.value_or(corpus_size >= val_count ? corpus_size - val_count : 0);
    if (val_count + train > corpus_size)
      throw DataError("insufficient corpus size: " + std::to_string(corpus_size) +
                      " pairs for train_count " + std::to_string(train) + " + val_count " +
                      std::to_string(val_count));
  }

  std::size_t augmented_size(std::size_t pool_size) const {
    return augmented_train_count.value_or(pool_size * augmentation_factor);
  }
};

template <typename Item>
struct Split {
  std::vector<Item> train;
  std::vector<Item> val;
};

// Seeded partition into (train pool, val). Input order does not matter; each
// side is returned sorted by id.
template <typename Item>
Split<Item> split(std::vector<Item> corpus, const SplitSpec& spec) {
  spec.validate(corpus.size());
  std::sort(corpus.begin(), corpus.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  const auto order = permutation(corpus.size(), derive_seed(spec.seed, 0x5b117ull));
  const std::size_t train_n = spec.train_count.value_or(corpus.size() - spec.val_count);
  Split<Item> out;
  for (std::size_t i = 0; i < spec.val_count; ++i) out.val.push_back(corpus[order[i]]);
  for (std::size_t i = 0; i < train_n; ++i) out.train.push_back(corpus[order[spec.val_count + i]]);
  auto by_id = [](const Item& a, const Item& b) { return a.id < b.id; };
  std::sort(out.train.begin(), out.train.end(), by_id);
  std::sort(out.val.begin(), out.val.end(), by_id);
  if constexpr (requires(Item it) { it.lineage; }) {
    for (auto& p : out.train) p.lineage = Lineage::train;
    for (auto& p : out.val) p.lineage = Lineage::val;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split manifests (JSON)

struct SplitManifest {
  std::uint64_t seed = 0;
  std::vector<CorpusEntry> entries;  // sorted by id
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;

  // "train", "val", or "all".
  std::vector<CorpusEntry> select(std::string_view which) const {
    if (which == "all") return entries;
    if (which != "train" && which != "val")
      throw ValidationError("unknown split '" + std::string(which) + "'");
    const auto& ids = which == "train" ? train_ids : val_ids;
    std::map<std::string, const CorpusEntry*> by_id;
    for (const auto& e : entries) by_id[e.id] = &e;
    std::vector<CorpusEntry> out;
    for (const auto& id : ids) out.push_back(*by_id.at(id));
    return out;
  }
};

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Line on which the index-th object of the top-level "pairs" array starts.
inline std::size_t line_of_pair_entry(const std::string& text, std::size_t index) {
  const auto key = text.find("\"pairs\"");
  if (key == std::string::npos) return 0;
  const auto open = text.find('[', key);
  if (open == std::string::npos) return 0;
  int depth = 0;
  bool in_string = false;
  std::size_t seen = 0;
  for (std::size_t i = open + 1; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_string) {
      if (ch == '\\') ++i;
      else if (ch == '"') in_string = false;
      continue;
    }
    if (ch == '"') in_string = true;
    else if (ch == '{' || ch == '[') {
      if (depth == 0 && ch == '{' && seen++ == index) return line_of_offset(text, i);
      ++depth;
    } else if (ch == '}' || ch == ']') {
      if (depth == 0) break;
      --depth;
    }
  }
  return 0;
}

}  // namespace detail

inline void write_split_manifest(const fs::path& path, const SplitManifest& m) {
  // One pair object per line keeps error line numbers meaningful.
  std::ostringstream os;
  os << "{\n  \"format\": \"firegan-split-manifest\",\n  \"version\": 1,\n";
  os << "  \"seed\": " << m.seed << ",\n  \"pairs\": [\n";
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    nlohmann::json j = {{"id", m.entries[i].id},
                        {"visible", m.entries[i].visible.generic_string()},
                        {"infrared", m.entries[i].infrared.generic_string()}};
    os << "    " << j.dump() << (i + 1 < m.entries.size() ? ",\n" : "\n");
  }
  os << "  ],\n  \"splits\": {\n";
  os << "    \"train\": " << nlohmann::json(m.train_ids).dump() << ",\n";
  os << "    \"val\": " << nlohmann::json(m.val_ids).dump() << "\n  }\n}\n";
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << os.str();
}

inline SplitManifest read_split_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ":" +
                          std::to_string(detail::line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0)) +
                          ": invalid JSON (" + e.what() + ")");
  }
  auto fail = [&](std::size_t line, const std::string& what) -> ValidationError {
    return ValidationError(path.string() + (line ? ":" + std::to_string(line) : std::string()) +
                           ": " + what);
  };
  if (!j.is_object() || j.value("format", "") != "firegan-split-manifest")
    throw fail(1, "not a firegan split manifest (missing \"format\")");
  if (!j.contains("pairs") || !j["pairs"].is_array()) throw fail(1, "missing \"pairs\" array");
  SplitManifest m;
  m.seed = j.value("seed", std::uint64_t{0});
  const auto base = path.parent_path();
  for (std::size_t i = 0; i < j["pairs"].size(); ++i) {
    const auto& e = j["pairs"][i];
    const std::size_t line = detail::line_of_pair_entry(text, i);
    for (const char* key : {"id", "visible", "infrared"})
      if (!e.is_object() || !e.contains(key) || !e[key].is_string())
        throw fail(line, std::string("pair entry ") + std::to_string(i) + " lacks string field \"" +
                             key + "\"");
    auto resolve = [&](const std::string& p) {
      fs::path q(p);
      return q.is_absolute() ? q : base / q;
    };
    m.entries.push_back({e["id"].get<std::string>(), resolve(e["visible"].get<std::string>()),
                         resolve(e["infrared"].get<std::string>())});
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::map<std::string, int> known;
  for (const auto& e : m.entries)
    if (known[e.id]++) throw fail(0, "duplicate pair id '" + e.id + "'");
  if (j.contains("splits")) {
    const auto& s = j["splits"];
    for (const char* name : {"train", "val"}) {
      if (!s.contains(name)) continue;
      auto& ids = std::string_view(name) == "train" ? m.train_ids : m.val_ids;
      for (const auto& id : s[name]) {
        if (!id.is_string() || !known.count(id.get<std::string>()))
          throw fail(detail::line_of_offset(text, text.find("\"" + std::string(name) + "\"")),
                     std::string("split '") + name + "' references unknown id " + id.dump());
        ids.push_back(id.get<std::string>());
      }
    }
  }
  return m;
}

// Accepts either a JSON split manifest or a CSV corpus list (no splits).
inline SplitManifest read_manifest(const fs::path& path) {
  if (path.extension() == ".csv") {
    SplitManifest m;
    m.entries = read_corpus_csv(path);
    return m;
  }
  return read_split_manifest(path);
}

}  // namespace firegan::data
