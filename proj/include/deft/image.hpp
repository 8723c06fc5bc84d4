#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "deft/geometry.hpp"
#include "deft/tensor.hpp"

namespace deft {

/// RGB image, values in [0,1], stored [H,W,3].
struct Image {
  Tensor data;

  Image() = default;
  Image(int h, int w) : data({h, w, 3}) {}
  explicit Image(Tensor t) : data(std::move(t)) {
    if (data.rank() != 3 || data.dim(2) != 3)
      throw std::invalid_argument("Image: expects [H,W,3]");
  }

  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }

  double gray(int y, int x) const {
    return (data.at(y, x, 0) + data.at(y, x, 1) + data.at(y, x, 2)) / 3.0;
  }
};

// ---------------------------------------------------------------------------
// PPM / PGM IO (P6/P5 binary, P3/P2 ascii accepted on read)
// ---------------------------------------------------------------------------

namespace detail {

inline int ppm_next_int(std::istream& in) {
  // Skips whitespace and '#' comments.
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  if (!(in >> v)) throw std::runtime_error("ppm: malformed header");
  return v;
}

}  // namespace detail

inline Image load_image_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_image_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  bool color = magic == "P6" || magic == "P3";
  bool binary = magic == "P6" || magic == "P5";
  if (!color && magic != "P5" && magic != "P2")
    throw std::runtime_error("load_image_ppm: unsupported format " + magic);
  int w = detail::ppm_next_int(in);
  int h = detail::ppm_next_int(in);
  int maxval = detail::ppm_next_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw std::runtime_error("load_image_ppm: bad header in " + path);
  Image img(h, w);
  int channels = color ? 3 : 1;
  int64_t count = static_cast<int64_t>(h) * w * channels;
  if (binary) {
    in.get();  // single whitespace after maxval
    int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(count * bytes));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw std::runtime_error("load_image_ppm: truncated " + path);
    for (int64_t i = 0; i < count; ++i) {
      double v;
      if (bytes == 1) {
        v = buf[static_cast<size_t>(i)] / static_cast<double>(maxval);
      } else {
        v = (buf[static_cast<size_t>(2 * i)] * 256 + buf[static_cast<size_t>(2 * i + 1)]) /
            static_cast<double>(maxval);
      }
      int64_t px = i / channels;
      int c = static_cast<int>(i % channels);
      int y = static_cast<int>(px / w), x = static_cast<int>(px % w);
      if (channels == 1) {
        for (int cc = 0; cc < 3; ++cc) img.data.at(y, x, cc) = v;
      } else {
        img.data.at(y, x, c) = v;
      }
    }
  } else {
    for (int64_t i = 0; i < count; ++i) {
      int v = detail::ppm_next_int(in);
      int64_t px = i / channels;
      int c = static_cast<int>(i % channels);
      int y = static_cast<int>(px / w), x = static_cast<int>(px % w);
      double fv = v / static_cast<double>(maxval);
      if (channels == 1) {
        for (int cc = 0; cc < 3; ++cc) img.data.at(y, x, cc) = fv;
      } else {
        img.data.at(y, x, c) = fv;
      }
    }
  }
  return img;
}

inline void save_image_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_image_ppm: cannot open " + path);
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> buf;
  buf.reserve(static_cast<size_t>(img.width()) * img.height() * 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.data.at(y, x, c), 0.0, 1.0);
        buf.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_image_ppm: write failed " + path);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Zero-padded bilinear lookup of one channel.
inline double sample_image(const Image& img, double x, double y, int c) {
  int h = img.height(), w = img.width();
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  double fx = x - x0, fy = y - y0;
  auto val = [&](int xx, int yy) -> double {
    if (xx < 0 || xx >= w || yy < 0 || yy >= h) return 0.0;
    return img.data.at(yy, xx, c);
  };
  return val(x0, y0) * (1 - fx) * (1 - fy) + val(x0 + 1, y0) * fx * (1 - fy) +
         val(x0, y0 + 1) * (1 - fx) * fy + val(x0 + 1, y0 + 1) * fx * fy;
}

/// Warps img into an (h,w) canvas so that out(p) = img(H^-1 p); pixels
/// mapping outside the source become black.
inline Image warp_image(const Image& img, const Homography& h_src_to_dst,
                        int out_h, int out_w) {
  Homography inv = h_src_to_dst.inverse();
  Image out(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      Point2 src;
      try {
        src = warp_homography({static_cast<double>(x), static_cast<double>(y)}, inv);
      } catch (const std::domain_error&) {
        continue;
      }
      for (int c = 0; c < 3; ++c)
        out.data.at(y, x, c) = sample_image(img, src.x, src.y, c);
    }
  return out;
}

/// Pads bottom/right with zeros so both sides divide by `multiple`.
struct PaddedImage {
  Image image;
  int pad_x = 0;
  int pad_y = 0;
};

inline PaddedImage pad_to_multiple(const Image& img, int multiple) {
  int w = img.width(), h = img.height();
  int pw = (multiple - w % multiple) % multiple;
  int ph = (multiple - h % multiple) % multiple;
  PaddedImage out;
  out.pad_x = pw;
  out.pad_y = ph;
  if (pw == 0 && ph == 0) {
    out.image = img;
    return out;
  }
  out.image = Image(h + ph, w + pw);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.image.data.at(y, x, c) = img.data.at(y, x, c);
  return out;
}

}  // namespace deft
