#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evwsss/errors.hpp"

namespace evwsss {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
      pixels[i] = r;
      pixels[i + 1] = g;
      pixels[i + 2] = b;
    }
  }

  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// 8-bit single channel; used for class-id maps (255 = ignore).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

namespace detail {

inline void write_png(const std::filesystem::path& path, int w, int h, png_uint_32 format,
                      const std::uint8_t* data) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot write " + path.string() + ": " + msg);
  }
}

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format,
                                          int& w, int& h) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw FormatError("cannot read " + path.string() + ": " + image.message);
  image.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode " + path.string() + ": " + msg);
  }
  w = static_cast<int>(image.width);
  h = static_cast<int>(image.height);
  return buf;
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  detail::write_png(path, img.width, img.height, PNG_FORMAT_RGB, img.pixels.data());
}

inline void write_png(const std::filesystem::path& path, const GrayImage& img) {
  detail::write_png(path, img.width, img.height, PNG_FORMAT_GRAY, img.pixels.data());
}

inline RgbImage read_rgb_png(const std::filesystem::path& path) {
  RgbImage img;
  img.pixels = detail::read_png(path, PNG_FORMAT_RGB, img.width, img.height);
  return img;
}

inline GrayImage read_gray_png(const std::filesystem::path& path) {
  GrayImage img;
  img.pixels = detail::read_png(path, PNG_FORMAT_GRAY, img.width, img.height);
  return img;
}

// In-memory PNG encoding, for serving frames over HTTP.
inline std::string encode_png(const RgbImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("png sizing failed: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("png encoding failed: ") + image.message);
  out.resize(size);
  return out;
}

}  // namespace evwsss
