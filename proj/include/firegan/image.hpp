#pragma once

// Host-side rasters: interleaved H x W x C float storage tagged with the value
// domain they live in. Networks consume batches of these as NCHW tensors.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "firegan/errors.hpp"
#include "firegan/tensor.hpp"

namespace firegan {

enum class Domain {
  file_u8,       // [0, 255]
  model_signed,  // [-1, 1]
};

inline const char* domain_name(Domain d) {
  return d == Domain::file_u8 ? "file_u8" : "model_signed";
}

struct DomainRange {
  float lo, hi;
};

inline DomainRange domain_range(Domain d) {
  return d == Domain::file_u8 ? DomainRange{0.0f, 255.0f} : DomainRange{-1.0f, 1.0f};
}

class Image {
 public:
  Image() = default;

  Image(int height, int width, int channels, Domain domain)
      : height_(height), width_(width), channels_(channels), domain_(domain) {
    check_dims();
    values_.assign(static_cast<std::size_t>(height) * width * channels,
                   domain_range(domain).lo);
  }

  Image(int height, int width, int channels, Domain domain, std::vector<float> values)
      : height_(height), width_(width), channels_(channels), domain_(domain),
        values_(std::move(values)) {
    check_dims();
    if (values_.size() != static_cast<std::size_t>(height) * width * channels)
      throw ShapeError("image value count does not match " + std::to_string(height) + "x" +
                       std::to_string(width) + "x" + std::to_string(channels));
    validate();
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  Domain domain() const noexcept { return domain_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  float& at(int y, int x, int c) {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  float at(int y, int x, int c) const {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  const std::vector<float>& values() const noexcept { return values_; }
  std::vector<float>& values() noexcept { return values_; }

  // Throws DomainError if any value is non-finite or outside the domain interval.
  void validate() const {
    const auto r = domain_range(domain_);
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const float v = values_[i];
      if (!std::isfinite(v) || v < r.lo || v > r.hi)
        throw DomainError("image value " + std::to_string(v) + " at index " + std::to_string(i) +
                          " outside " + domain_name(domain_) + " range");
    }
  }

  Image channel(int c) const {
    Image out(height_, width_, 1, domain_);
    for (std::size_t p = 0; p < static_cast<std::size_t>(height_) * width_; ++p)
      out.values_[p] = values_[p * channels_ + c];
    return out;
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.channels_ == b.channels_ &&
           a.domain_ == b.domain_ && a.values_ == b.values_;
  }

 private:
  void check_dims() const {
    if (height_ < 1 || width_ < 1) throw ShapeError("image dimensions must be at least 1x1");
    if (channels_ != 1 && channels_ != 3)
      throw ShapeError("image channels must be 1 or 3, got " + std::to_string(channels_));
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  Domain domain_ = Domain::file_u8;
  std::vector<float> values_;
};

// Where a pair is allowed to flow; validation pairs must never reach an optimizer.
enum class Lineage { unassigned, train, val };

inline const char* lineage_name(Lineage l) {
  switch (l) {
    case Lineage::train: return "train";
    case Lineage::val: return "val";
    default: return "unassigned";
  }
}

struct ImagePair {
  Image visible;
  Image infrared;
  std::string id;
  Lineage lineage = Lineage::unassigned;

  void validate() const {
    if (visible.channels() != 3)
      throw DataError("pair '" + id + "': visible image must have 3 channels");
    if (visible.height() != infrared.height() || visible.width() != infrared.width())
      throw DataError("pair '" + id + "': dimension mismatch, visible " +
                      std::to_string(visible.height()) + "x" + std::to_string(visible.width()) +
                      " vs infrared " + std::to_string(infrared.height()) + "x" +
                      std::to_string(infrared.width()));
  }
};

// Affine file_u8 <-> model_signed maps.
inline Image to_model_domain(const Image& img) {
  if (img.domain() != Domain::file_u8)
    throw DomainError("to_model_domain expects a file_u8 image");
  std::vector<float> v(img.values().size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = std::clamp(img.values()[i] / 127.5f - 1.0f, -1.0f, 1.0f);
  return Image(img.height(), img.width(), img.channels(), Domain::model_signed, std::move(v));
}

inline Image from_model_domain(const Image& img) {
  if (img.domain() != Domain::model_signed)
    throw DomainError("from_model_domain expects a model_signed image");
  std::vector<float> v(img.values().size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = std::clamp((img.values()[i] + 1.0f) * 127.5f, 0.0f, 255.0f);
  return Image(img.height(), img.width(), img.channels(), Domain::file_u8, std::move(v));
}

// Rounds a file_u8 image to integer levels, ties to even.
inline Image quantize_u8(const Image& img) {
  Image src = img.domain() == Domain::model_signed ? from_model_domain(img) : img;
  for (auto& v : src.values()) v = std::clamp(std::nearbyint(v), 0.0f, 255.0f);
  return src;
}

inline Image replicate_to_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  Image out(img.height(), img.width(), 3, img.domain());
  for (std::size_t p = 0; p < img.size(); ++p)
    for (int c = 0; c < 3; ++c) out.values()[p * 3 + c] = img.values()[p];
  return out;
}

inline Image to_luma(const Image& img) {
  if (img.channels() == 1) return img;
  Image out(img.height(), img.width(), 1, img.domain());
  for (std::size_t p = 0; p < out.size(); ++p) {
    const float* px = img.values().data() + p * 3;
    out.values()[p] = 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2];
  }
  return out;
}

// Stacks equally sized images into an NCHW tensor.
template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("to_tensor: empty batch");
  const Image& first = *images.front();
  const std::size_t H = static_cast<std::size_t>(first.height());
  const std::size_t W = static_cast<std::size_t>(first.width());
  const std::size_t C = static_cast<std::size_t>(first.channels());
  Tensor<T> t(Shape{images.size(), C, H, W});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height() != first.height() || img.width() != first.width() ||
        img.channels() != first.channels())
      throw ShapeError("to_tensor: batch images differ in shape");
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c)
          t.at(n, c, y, x) = static_cast<T>(img.values()[(y * W + x) * C + c]);
  }
  return t;
}

template <typename T>
Tensor<T> to_tensor(const Image& img) {
  return to_tensor<T>(std::vector<const Image*>{&img});
}

template <typename T>
Image from_tensor(const Tensor<T>& t, std::size_t n, Domain domain) {
  if (t.rank() != 4) throw ShapeError("from_tensor expects NCHW");
  const std::size_t C = t.c(), H = t.h(), W = t.w();
  std::vector<float> v(C * H * W);
  const auto r = domain_range(domain);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c)
        v[(y * W + x) * C + c] = std::clamp(static_cast<float>(t.at(n, c, y, x)), r.lo, r.hi);
  return Image(static_cast<int>(H), static_cast<int>(W), static_cast<int>(C), domain,
               std::move(v));
}

}  // namespace firegan
