#pragma once

// Fusion quality metrics: information entropy, correlation coefficient,
// PSNR and windowed SSIM, plus the seven-score record that compares a fused
// image against its infrared and visible sources.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "firegan/errors.hpp"
#include "firegan/image.hpp"

namespace firegan::metrics {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class ChannelMode { per_channel, luma };

inline ChannelMode parse_channel_mode(const std::string& s) {
  if (s == "per_channel") return ChannelMode::per_channel;
  if (s == "luma") return ChannelMode::luma;
  throw ValidationError("channel_mode must be 'per_channel' or 'luma', got '" + s + "'");
}

inline const char* channel_mode_name(ChannelMode m) {
  return m == ChannelMode::per_channel ? "per_channel" : "luma";
}

struct MetricParams {
  int entropy_levels = 256;
  double psnr_max = 255.0;
  double ssim_alpha = 1.0, ssim_beta = 1.0, ssim_gamma = 1.0;
  // Unset constants follow MAX: c1 = (0.01 MAX)^2, c2 = (0.03 MAX)^2, c3 = c2 / 2.
  std::optional<double> ssim_c1, ssim_c2, ssim_c3;
  int ssim_window = 11;
  ChannelMode channel_mode = ChannelMode::per_channel;

  double c1() const { return ssim_c1.value_or(std::pow(0.01 * psnr_max, 2)); }
  double c2() const { return ssim_c2.value_or(std::pow(0.03 * psnr_max, 2)); }
  double c3() const { return ssim_c3.value_or(c2() / 2.0); }

  void validate() const {
    if (entropy_levels < 2) throw ValidationError("entropy_levels must be >= 2");
    if (!(psnr_max > 0)) throw ValidationError("psnr_max must be positive");
    if (!(c1() > 0) || !(c2() > 0) || !(c3() > 0))
      throw ValidationError("ssim constants must be positive");
    if (ssim_window < 3 || ssim_window % 2 == 0)
      throw ValidationError("ssim_window must be odd and >= 3");
    for (double e : {ssim_alpha, ssim_beta, ssim_gamma})
      if (!(e > 0)) throw ValidationError("ssim exponents must be positive");
  }
};

// Information entropy in bits of the L-bin histogram over all elements.
// Model-domain input is first mapped to 8-bit levels.
inline double entropy(const Image& img, const MetricParams& p = {}) {
  if (img.empty()) throw DataError("entropy of an empty image");
  const Image u8 = img.domain() == Domain::model_signed ? quantize_u8(img) : img;
  const auto L = static_cast<std::size_t>(p.entropy_levels);
  std::vector<std::size_t> hist(L, 0);
  for (float v : u8.values()) {
    const auto bin = static_cast<std::size_t>(std::floor(static_cast<double>(v) * L / 256.0));
    ++hist[std::min(L - 1, bin)];
  }
  const double n = static_cast<double>(u8.size());
  double h = 0.0;
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double q = static_cast<double>(c) / n;
    h -= q * std::log2(q);
  }
  return h == 0.0 ? 0.0 : h;  // normalize -0
}

namespace detail {

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels())
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                     std::to_string(b.channels()));
}

inline void require_same_domain(const Image& a, const Image& b, const char* what) {
  if (a.domain() != b.domain())
    throw DomainError(std::string(what) + ": images are in different value domains");
}

inline double signed_pow(double base, double e) {
  if (e == 1.0) return base;
  return base < 0 ? -std::pow(-base, e) : std::pow(base, e);
}

}  // namespace detail

// Pearson correlation over all elements (population moments).
inline double correlation(const Image& x, const Image& y) {
  detail::require_same_shape(x, y, "correlation");
  const auto& a = x.values();
  const auto& b = y.values();
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw NumericError("correlation undefined: an input has zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// 10 log10(MAX^2 / MSE); +infinity when the images are identical.
inline double psnr(const Image& ref, const Image& test, const MetricParams& p = {}) {
  detail::require_same_shape(ref, test, "psnr");
  detail::require_same_domain(ref, test, "psnr");
  double se = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = static_cast<double>(ref.values()[i]) - test.values()[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(ref.size());
  if (mse == 0.0) return kInfinity;
  return 10.0 * std::log10(p.psnr_max * p.psnr_max / mse);
}

// Mean over all fully contained w x w windows of
//   l^alpha * c^beta * s^gamma,
//   l = (2 ux uy + c1) / (ux^2 + uy^2 + c1)
//   c = (2 sx sy + c2) / (sx^2 + sy^2 + c2)
//   s = (sxy + c3) / (sx sy + c3)
// with uniform window weights and population moments, averaged over channels.
inline double ssim(const Image& x, const Image& y, const MetricParams& p = {}) {
  detail::require_same_shape(x, y, "ssim");
  detail::require_same_domain(x, y, "ssim");
  const int H = x.height(), W = x.width(), C = x.channels(), win = p.ssim_window;
  if (win > H || win > W)
    throw ShapeError("ssim window " + std::to_string(win) + " larger than image " +
                     std::to_string(H) + "x" + std::to_string(W));
  const double c1 = p.c1(), c2 = p.c2(), c3 = p.c3();
  const double area = static_cast<double>(win) * win;
  const std::size_t stride = static_cast<std::size_t>(W) + 1;
  std::vector<double> sx, sy, sxx, syy, sxy;
  double total = 0;
  for (int ch = 0; ch < C; ++ch) {
    // Summed-area tables for the five window moments.
    for (auto* t : {&sx, &sy, &sxx, &syy, &sxy}) t->assign(stride * (H + 1), 0.0);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const double a = x.at(r, c, ch), b = y.at(r, c, ch);
        const std::size_t i = (r + 1) * stride + (c + 1);
        const std::size_t up = r * stride + (c + 1), left = (r + 1) * stride + c, diag = r * stride + c;
        sx[i] = a + sx[up] + sx[left] - sx[diag];
        sy[i] = b + sy[up] + sy[left] - sy[diag];
        sxx[i] = a * a + sxx[up] + sxx[left] - sxx[diag];
        syy[i] = b * b + syy[up] + syy[left] - syy[diag];
        sxy[i] = a * b + sxy[up] + sxy[left] - sxy[diag];
      }
    auto box = [&](const std::vector<double>& t, int r0, int c0) {
      const std::size_t r1 = r0 + win, c1i = c0 + win;
      return t[r1 * stride + c1i] - t[r0 * stride + c1i] - t[r1 * stride + c0] + t[r0 * stride + c0];
    };
    double acc = 0;
    for (int r = 0; r + win <= H; ++r)
      for (int c = 0; c + win <= W; ++c) {
        const double ux = box(sx, r, c) / area, uy = box(sy, r, c) / area;
        const double vx = std::max(0.0, box(sxx, r, c) / area - ux * ux);
        const double vy = std::max(0.0, box(syy, r, c) / area - uy * uy);
        const double dxy = std::sqrt(vx * vy);
        // Cauchy-Schwarz bound; also keeps ssim(x, x) exactly 1 under rounding.
        const double cxy = std::clamp(box(sxy, r, c) / area - ux * uy, -dxy, dxy);
        const double l = (2 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        const double con = (2 * dxy + c2) / (vx + vy + c2);
        const double s = (cxy + c3) / (dxy + c3);
        acc += detail::signed_pow(l, p.ssim_alpha) * detail::signed_pow(con, p.ssim_beta) *
               detail::signed_pow(s, p.ssim_gamma);
      }
    total += acc / (static_cast<double>(H - win + 1) * (W - win + 1));
  }
  return total / C;
}

// --- records ---------------------------------------------------------------

// One row of scores with a per-cell error marker.
template <std::size_t N>
struct ScoreRow {
  std::string id;
  std::array<std::optional<double>, N> values{};
  std::array<std::string, N> errors{};

  bool complete() const {
    return std::all_of(values.begin(), values.end(), [](const auto& v) { return v.has_value(); });
  }
  double at(std::size_t i) const {
    if (!values[i]) throw DataError("score cell " + std::to_string(i) + " of '" + id + "' failed: " + errors[i]);
    return *values[i];
  }
};

// Fused image vs both sources, in the row order EN, CC IR, CC RGB, PSNR IR,
// PSNR RGB, SSIM IR, SSIM RGB.
using MetricRecord = ScoreRow<7>;
inline constexpr std::array<const char*, 7> kTripleKeys = {"en", "cc_ir", "cc_rgb", "psnr_ir",
                                                           "psnr_rgb", "ssim_ir", "ssim_rgb"};
inline constexpr std::array<const char*, 7> kTripleLabels = {
    "EN", "CC IR-fused", "CC RGB-fused", "PSNR IR-fused", "PSNR RGB-fused", "SSIM IR-fused", "SSIM RGB-fused"};
enum TripleColumn : std::size_t { EN = 0, CC_IR, CC_RGB, PSNR_IR, PSNR_RGB, SSIM_IR, SSIM_RGB };

// A single test image vs one reference (generated IR vs real IR).
using PairRecord = ScoreRow<4>;
inline constexpr std::array<const char*, 4> kPairKeys = {"en", "cc", "psnr", "ssim"};
inline constexpr std::array<const char*, 4> kPairLabels = {"EN", "CC", "PSNR", "SSIM"};

namespace detail {

// Quantized 8-bit, 3-channel (or luma) view used for every comparison.
inline Image prepare(const Image& img, ChannelMode mode) {
  Image q = quantize_u8(img);
  if (mode == ChannelMode::luma) {
    q = to_luma(q);
    for (auto& v : q.values()) v = std::nearbyint(v);
    return q;
  }
  return replicate_to_rgb(q);
}

inline double per_channel(const Image& a, const Image& b, double (*f)(const Image&, const Image&)) {
  double s = 0;
  for (int c = 0; c < a.channels(); ++c) s += f(a.channel(c), b.channel(c));
  return s / a.channels();
}

template <typename F>
void fill(std::optional<double>& cell, std::string& error, F&& f) {
  try {
    cell = f();
  } catch (const std::exception& e) {
    cell.reset();
    error = e.what();
  }
}

}  // namespace detail

// Per-channel correlation, averaged.
inline double channel_correlation(const Image& a, const Image& b) {
  detail::require_same_shape(a, b, "correlation");
  return detail::per_channel(a, b, [](const Image& x, const Image& y) { return correlation(x, y); });
}

inline MetricRecord evaluate_triple(const Image& visible, const Image& real_ir, const Image& fused,
                                    const MetricParams& p = {}, std::string id = {}) {
  MetricRecord r;
  r.id = std::move(id);
  Image v, ir, f;
  try {
    v = detail::prepare(visible, p.channel_mode);
    ir = detail::prepare(real_ir, p.channel_mode);
    f = detail::prepare(fused, p.channel_mode);
  } catch (const std::exception& e) {
    for (auto& err : r.errors) err = e.what();
    return r;
  }
  detail::fill(r.values[EN], r.errors[EN], [&] { return entropy(f, p); });
  detail::fill(r.values[CC_IR], r.errors[CC_IR], [&] { return channel_correlation(ir, f); });
  detail::fill(r.values[CC_RGB], r.errors[CC_RGB], [&] { return channel_correlation(v, f); });
  detail::fill(r.values[PSNR_IR], r.errors[PSNR_IR], [&] {
    double s = 0;
    for (int c = 0; c < f.channels(); ++c) s += psnr(ir.channel(c), f.channel(c), p);
    return s / f.channels();
  });
  detail::fill(r.values[PSNR_RGB], r.errors[PSNR_RGB], [&] {
    double s = 0;
    for (int c = 0; c < f.channels(); ++c) s += psnr(v.channel(c), f.channel(c), p);
    return s / f.channels();
  });
  detail::fill(r.values[SSIM_IR], r.errors[SSIM_IR], [&] { return ssim(ir, f, p); });
  detail::fill(r.values[SSIM_RGB], r.errors[SSIM_RGB], [&] { return ssim(v, f, p); });
  return r;
}

inline PairRecord evaluate_pair(const Image& reference, const Image& test, const MetricParams& p = {},
                                std::string id = {}) {
  PairRecord r;
  r.id = std::move(id);
  Image a, b;
  try {
    a = detail::prepare(reference, p.channel_mode);
    b = detail::prepare(test, p.channel_mode);
  } catch (const std::exception& e) {
    for (auto& err : r.errors) err = e.what();
    return r;
  }
  detail::fill(r.values[0], r.errors[0], [&] { return entropy(b, p); });
  detail::fill(r.values[1], r.errors[1], [&] { return channel_correlation(a, b); });
  detail::fill(r.values[2], r.errors[2], [&] {
    double s = 0;
    for (int c = 0; c < b.channels(); ++c) s += psnr(a.channel(c), b.channel(c), p);
    return s / b.channels();
  });
  detail::fill(r.values[3], r.errors[3], [&] { return ssim(a, b, p); });
  return r;
}

// Column-wise arithmetic mean over the cells that succeeded.
template <std::size_t N>
ScoreRow<N> aggregate(const std::vector<ScoreRow<N>>& rows, std::string id = "mean") {
  ScoreRow<N> out;
  out.id = std::move(id);
  for (std::size_t k = 0; k < N; ++k) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.values[k]) {
        sum += *r.values[k];
        ++n;
      }
    if (n > 0) {
      out.values[k] = sum / static_cast<double>(n);
    } else {
      out.errors[k] = "no valid items";
    }
  }
  return out;
}

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  std::size_t count = 0;
};

// Quartiles by linear interpolation between order statistics.
inline FiveNumber five_number_summary(std::vector<double> v) {
  FiveNumber s;
  s.count = v.size();
  if (v.empty()) throw DataError("five-number summary of an empty sample");
  std::sort(v.begin(), v.end());
  auto q = [&](double f) {
    const double pos = f * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(v.size() - 1, lo + 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0 || v[lo] == v[hi]) return v[lo];
    return v[lo] + frac * (v[hi] - v[lo]);
  };
  s.min = v.front();
  s.q1 = q(0.25);
  s.median = q(0.5);
  s.q3 = q(0.75);
  s.max = v.back();
  return s;
}

template <std::size_t N>
std::vector<std::optional<FiveNumber>> boxplot_summary(const std::vector<ScoreRow<N>>& rows) {
  std::vector<std::optional<FiveNumber>> out;
  for (std::size_t k = 0; k < N; ++k) {
    std::vector<double> col;
    for (const auto& r : rows)
      if (r.values[k]) col.push_back(*r.values[k]);
    if (col.empty()) out.emplace_back();
    else out.emplace_back(five_number_summary(std::move(col)));
  }
  return out;
}

// CSV cell text: shortest round-trip form, "inf" for the PSNR sentinel,
// "error" for a failed cell.
inline std::string format_value(const std::optional<double>& v) {
  if (!v) return "error";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

inline std::optional<double> parse_value(const std::string& s) {
  if (s == "error" || s.empty()) return std::nullopt;
  if (s == "inf") return kInfinity;
  if (s == "-inf") return -kInfinity;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw DataError("bad numeric cell '" + s + "'");
  return v;
}

template <std::size_t N>
std::string csv_header(const std::array<const char*, N>& keys) {
  std::string h = "id";
  for (const char* k : keys) h += std::string(",") + k;
  return h;
}

template <std::size_t N>
std::string csv_row(const ScoreRow<N>& r) {
  std::string line = r.id;
  for (const auto& v : r.values) line += "," + format_value(v);
  return line;
}

}  // namespace firegan::metrics
