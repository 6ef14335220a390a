#pragma once

// 8-bit RGB rasters, binary masks, PNG coding (libpng) and base64 (OpenSSL).

#include <openssl/evp.h>
#include <png.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lvqa/error.hpp"

namespace lvqa {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};

/// Row-major interleaved RGB raster.
class Image {
 public:
  Image() = default;
  Image(int height, int width, Rgb fill = kBlack) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw GeometryError("negative image dimensions");
    data_.resize(static_cast<size_t>(height) * width * 3);
    for (size_t p = 0; p < data_.size(); p += 3) std::memcpy(&data_[p], fill.data(), 3);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return height_ == 0 || width_ == 0; }

  std::uint8_t* px(int y, int x) { return &data_[(static_cast<size_t>(y) * width_ + x) * 3]; }
  const std::uint8_t* px(int y, int x) const {
    return &data_[(static_cast<size_t>(y) * width_ + x) * 3];
  }
  Rgb at(int y, int x) const {
    const auto* p = px(y, x);
    return {p[0], p[1], p[2]};
  }
  void set(int y, int x, Rgb c) { std::memcpy(px(y, x), c.data(), 3); }

  std::span<std::uint8_t> bytes() { return data_; }
  std::span<const std::uint8_t> bytes() const { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Binary H x W grid.
class Bitmap {
 public:
  Bitmap() = default;
  Bitmap(int height, int width, bool fill = false)
      : height_(height), width_(width), bits_(static_cast<size_t>(height) * width, fill ? 1 : 0) {}

  int height() const { return height_; }
  int width() const { return width_; }
  bool get(int y, int x) const { return bits_[static_cast<size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v = true) { bits_[static_cast<size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool any() const {
    for (auto b : bits_) if (b) return true;
    return false;
  }
  size_t count() const {
    size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }
  void unite(const Bitmap& other) {
    if (other.height_ != height_ || other.width_ != width_)
      throw GeometryError("bitmap union with mismatched dimensions");
    for (size_t i = 0; i < bits_.size(); ++i) bits_[i] |= other.bits_[i];
  }
  std::span<const std::uint8_t> cells() const { return bits_; }

  friend bool operator==(const Bitmap&, const Bitmap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// ---------------------------------------------------------------------------
// PNG

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width());
  desc.height = static_cast<png_uint_32>(img.height());
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, img.bytes().data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, img.bytes().data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw IoError(std::string("png decode failed: ") + desc.message);
  }
  desc.format = PNG_FORMAT_RGB;
  if (desc.width == 0 || desc.height == 0) {
    png_image_free(&desc);
    throw IoError("png decode failed: zero-sized image");
  }
  Image img(static_cast<int>(desc.height), static_cast<int>(desc.width));
  if (!png_image_finish_read(&desc, nullptr, img.bytes().data(), 0, nullptr)) {
    png_image_free(&desc);
    throw IoError(std::string("png decode failed: ") + desc.message);
  }
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Image read_png(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// base64

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                          static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 payload length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0) throw ProtocolError("malformed base64 payload");
  // EVP_DecodeBlock keeps the bytes that padding stands for.
  size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

}  // namespace lvqa
