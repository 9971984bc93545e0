#pragma once

// Raster file I/O through OpenCV, plus an optional decoded-image cache keyed
// by (path, size, mtime) under $FIREGAN_CACHE_DIR.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <optional>
#include <string>

#include "firegan/errors.hpp"
#include "firegan/image.hpp"

namespace firegan::io {

namespace fs = std::filesystem;

inline bool is_raster_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".tif" || ext == ".tiff";
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

inline std::optional<fs::path> cache_dir() {
  const char* env = std::getenv("FIREGAN_CACHE_DIR");
  if (env == nullptr || *env == '\0') return std::nullopt;
  return fs::path(env);
}

inline fs::path cache_entry(const fs::path& dir, const fs::path& file) {
  std::error_code ec;
  const auto abs = fs::absolute(file, ec).string();
  const auto size = fs::file_size(file, ec);
  const auto mtime = fs::last_write_time(file, ec).time_since_epoch().count();
  const std::string key = abs + "|" + std::to_string(size) + "|" + std::to_string(mtime);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return dir / (std::string(hex) + ".fgimg");
}

// Cache record: int32 h, w, c followed by h*w*c bytes.
inline std::optional<Image> read_cached(const fs::path& entry) {
  std::ifstream in(entry, std::ios::binary);
  if (!in) return std::nullopt;
  std::int32_t dims[3];
  if (!in.read(reinterpret_cast<char*>(dims), sizeof dims)) return std::nullopt;
  if (dims[0] < 1 || dims[1] < 1 || (dims[2] != 1 && dims[2] != 3)) return std::nullopt;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    return std::nullopt;
  std::vector<float> values(bytes.begin(), bytes.end());
  return Image(dims[0], dims[1], dims[2], Domain::file_u8, std::move(values));
}

inline void write_cached(const fs::path& entry, const Image& img) {
  std::error_code ec;
  fs::create_directories(entry.parent_path(), ec);
  const fs::path tmp = entry.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) return;
    const std::int32_t dims[3] = {img.height(), img.width(), img.channels()};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    std::vector<unsigned char> bytes(img.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
      bytes[i] = static_cast<unsigned char>(img.values()[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, entry, ec);
}

inline Image decode(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("unreadable image file: " + path.string());
  cv::Mat mat8;
  if (raw.depth() == CV_8U) {
    mat8 = raw;
  } else if (raw.depth() == CV_16U) {
    raw.convertTo(mat8, CV_8U, 1.0 / 257.0);
  } else {
    throw IoError("unsupported pixel depth in " + path.string());
  }
  cv::Mat rgb;
  switch (mat8.channels()) {
    case 1: rgb = mat8; break;
    case 3: cv::cvtColor(mat8, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(mat8, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw IoError("unsupported channel count in " + path.string());
  }
  if (!rgb.isContinuous()) rgb = rgb.clone();
  const int c = rgb.channels();
  std::vector<float> values(rgb.data, rgb.data + static_cast<std::size_t>(rgb.rows) * rgb.cols * c);
  return Image(rgb.rows, rgb.cols, c, Domain::file_u8, std::move(values));
}

}  // namespace detail

// Decodes an 8- or 16-bit raster to a file_u8 image (1 or 3 channels, RGB order).
inline Image read_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  const auto dir = detail::cache_dir();
  if (!dir) return detail::decode(path);
  const auto entry = detail::cache_entry(*dir, path);
  if (auto cached = detail::read_cached(entry)) return *cached;
  Image img = detail::decode(path);
  detail::write_cached(entry, img);
  return img;
}

// Writes an 8-bit raster; model-domain images are mapped to [0,255] and
// rounded half to even.
inline void write_image(const fs::path& path, const Image& img) {
  const Image q = quantize_u8(img);
  cv::Mat mat(q.height(), q.width(), q.channels() == 3 ? CV_8UC3 : CV_8UC1);
  for (std::size_t i = 0; i < q.size(); ++i) mat.data[i] = static_cast<unsigned char>(q.values()[i]);
  if (q.channels() == 3) cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (!cv::imwrite(path.string(), mat)) throw IoError("failed to write image " + path.string());
}

// Area/bilinear resample to (height, width); identity when sizes match.
inline Image resize(const Image& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  cv::Mat src(img.height(), img.width(), CV_32FC(img.channels()),
              const_cast<float*>(img.values().data()));
  cv::Mat dst;
  const bool shrinking = height < img.height() && width < img.width();
  cv::resize(src, dst, cv::Size(width, height), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  const auto r = domain_range(img.domain());
  std::vector<float> values(reinterpret_cast<const float*>(dst.data),
                            reinterpret_cast<const float*>(dst.data) + dst.total() * dst.channels());
  for (auto& v : values) v = std::clamp(v, r.lo, r.hi);
  return Image(height, width, img.channels(), img.domain(), std::move(values));
}

}  // namespace firegan::io
