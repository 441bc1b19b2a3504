#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kptrack/error.hpp"
#include "kptrack/tensor.hpp"
#include "kptrack/tsr.hpp"

// Frame, flow and depth file formats.
//   PNG  8-bit RGB frames <-> Tensor[3,H,W] in [0,1]; 8-bit label maps.
//   PFM  grayscale ("Pf"), little-endian (negative scale), bottom-to-top rows
//        <-> Tensor[1,H,W].
//   FLO  Middlebury: f32 tag 202021.25 ("PIEH"), i32 width, i32 height,
//        interleaved (u,v) f32 rows <-> Tensor[2,H,W].

namespace kptrack::io {

inline constexpr float kFloTag = 202021.25f;

inline Tensor read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw ParseError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ParseError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  const std::int64_t h = image.height, w = image.width;
  Tensor t(Shape{3, h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<float>(buf[static_cast<std::size_t>((y * w + x) * 3 + c)]) / 255.0f;
  return t;
}

inline void write_png_rgb8(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, std::int64_t h,
                           std::int64_t w) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

/// Writes a [3,H,W] tensor in [0,1] as 8-bit RGB (values clamped, rounded).
inline void write_png(const std::filesystem::path& path, const Tensor& t) {
  require_rank(t, 3, "write_png");
  if (t.dim(0) != 3) throw ShapeError("write_png: expected 3 channels, got " + shape_str(t.shape()));
  const std::int64_t h = t.dim(1), w = t.dim(2);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h * w * 3));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(t.at(c, y, x), 0.0f, 1.0f);
        buf[static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  write_png_rgb8(path, buf, h, w);
}

/// Writes an 8-bit single-channel label map.
inline void write_label_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels, std::int64_t h,
                            std::int64_t w) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, labels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

inline std::vector<std::uint8_t> read_label_png(const std::filesystem::path& path, std::int64_t& h, std::int64_t& w) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw ParseError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ParseError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  h = image.height;
  w = image.width;
  return buf;
}

inline void write_pfm(std::ostream& os, const Tensor& t) {
  require_rank(t, 3, "write_pfm");
  if (t.dim(0) != 1) throw ShapeError("write_pfm: expected 1 channel, got " + shape_str(t.shape()));
  const std::int64_t h = t.dim(1), w = t.dim(2);
  os << "Pf\n" << w << ' ' << h << "\n-1.0\n";
  for (std::int64_t y = h - 1; y >= 0; --y) {
    os.write(reinterpret_cast<const char*>(t.ptr() + y * w), static_cast<std::streamsize>(w * sizeof(float)));
  }
}

inline Tensor read_pfm(std::istream& is, const std::string& what = "PFM") {
  auto next_token = [&](const char* field) {
    std::string tok;
    if (!(is >> tok)) throw ParseError(what + ": truncated header (missing " + field + ")");
    return tok;
  };
  const std::string magic = next_token("magic");
  if (magic == "PF") throw ParseError(what + ": colour PFM (\"PF\") found, expected grayscale \"Pf\"");
  if (magic != "Pf") throw ParseError(what + ": bad magic \"" + magic + "\", expected \"Pf\"");
  std::int64_t w = 0, h = 0;
  double scale = 0.0;
  try {
    w = std::stoll(next_token("width"));
    h = std::stoll(next_token("height"));
    scale = std::stod(next_token("scale"));
  } catch (const std::invalid_argument&) {
    throw ParseError(what + ": malformed header");
  }
  if (w <= 0 || h <= 0) throw ParseError(what + ": invalid size " + std::to_string(w) + "x" + std::to_string(h));
  if (scale == 0.0) throw ParseError(what + ": zero scale");
  is.get();  // single whitespace after the scale
  Tensor t(Shape{1, h, w});
  for (std::int64_t y = h - 1; y >= 0; --y) detail::read_floats(is, t.ptr() + y * w, static_cast<std::size_t>(w), what);
  if (scale > 0.0) {
    for (auto& v : t.data()) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = __builtin_bswap32(bits);
      v = std::bit_cast<float>(bits);
    }
  }
  return t;
}

inline void write_pfm(const std::filesystem::path& path, const Tensor& t) {
  auto os = detail::open_out(path);
  write_pfm(os, t);
  if (!os) throw IoError("failed writing " + path.string());
}

inline Tensor read_pfm(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return read_pfm(is, path.string());
}

inline void write_flo(std::ostream& os, const Tensor& flow) {
  require_rank(flow, 3, "write_flo");
  if (flow.dim(0) != 2) throw ShapeError("write_flo: expected 2 channels, got " + shape_str(flow.shape()));
  const std::int64_t h = flow.dim(1), w = flow.dim(2);
  detail::write_f32(os, kFloTag);
  detail::write_i32(os, static_cast<std::int32_t>(w));
  detail::write_i32(os, static_cast<std::int32_t>(h));
  std::vector<float> row(static_cast<std::size_t>(w * 2));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      row[static_cast<std::size_t>(2 * x)] = flow.at(0, y, x);
      row[static_cast<std::size_t>(2 * x + 1)] = flow.at(1, y, x);
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
}

inline Tensor read_flo(std::istream& is, const std::string& what = "FLO") {
  const auto tag = detail::read_pod<float>(is, what);
  if (tag != kFloTag) {
    throw ParseError(what + ": bad magic, expected float 202021.25 (\"PIEH\")");
  }
  const auto w = detail::read_pod<std::int32_t>(is, what);
  const auto h = detail::read_pod<std::int32_t>(is, what);
  if (w < 1 || h < 1 || w > 99999 || h > 99999) {
    throw ParseError(what + ": illegal size " + std::to_string(w) + "x" + std::to_string(h));
  }
  Tensor flow(Shape{2, h, w});
  std::vector<float> row(static_cast<std::size_t>(w) * 2);
  for (std::int64_t y = 0; y < h; ++y) {
    detail::read_floats(is, row.data(), row.size(), what);
    for (std::int64_t x = 0; x < w; ++x) {
      flow.at(0, y, x) = row[static_cast<std::size_t>(2 * x)];
      flow.at(1, y, x) = row[static_cast<std::size_t>(2 * x + 1)];
    }
  }
  return flow;
}

inline void write_flo(const std::filesystem::path& path, const Tensor& flow) {
  auto os = detail::open_out(path);
  write_flo(os, flow);
  if (!os) throw IoError("failed writing " + path.string());
}

inline Tensor read_flo(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return read_flo(is, path.string());
}

}  // namespace kptrack::io
