// Copyright 2026 The GPSMamba Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Binary PGM (P5) reading and writing. P6 input is accepted and converted to
// luma with BT.601 weights.

#pragma once

#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "gpsmamba/tensor.hpp"

namespace gpsmamba {

struct ImageInfo {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
  bool from_color = false;
};

struct Image {
  Tensor pixels;  // [H x W], values in [0, 255]
  ImageInfo info;
};

namespace detail {

class PnmCursor {
 public:
  explicit PnmCursor(const std::vector<unsigned char>& bytes) : b_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > 1u << 30) throw ParseError(std::string("PGM ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("PGM: expected ") + what, pos_);
    return v;
  }

  std::size_t pos_ = 0;
  const std::vector<unsigned char>& b_;
};

}  // namespace detail

/// Parses an in-memory P5/P6 image. 16-bit samples are big-endian; all
/// samples are mapped linearly to [0, 255] via v * 255 / maxval.
inline Image decode_pnm(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("PGM: bad magic (expected P5 or P6)", 0);
  }
  const bool color = bytes[1] == '6';
  detail::PnmCursor cur(bytes);
  cur.pos_ = 2;
  Image img;
  img.info.width = cur.number("width");
  img.info.height = cur.number("height");
  img.info.maxval = cur.number("maxval");
  img.info.from_color = color;
  if (img.info.width == 0 || img.info.height == 0) throw ParseError("PGM: zero extent", cur.pos_);
  if (img.info.maxval == 0 || img.info.maxval > 65535) throw ParseError("PGM: maxval out of range", cur.pos_);
  if (cur.pos_ >= bytes.size() || !std::isspace(bytes[cur.pos_])) throw ParseError("PGM: missing header terminator", cur.pos_);
  ++cur.pos_;
  const std::size_t bps = img.info.maxval > 255 ? 2 : 1, spp = color ? 3 : 1;
  const std::size_t n = img.info.width * img.info.height;
  const std::size_t need = n * bps * spp;
  if (bytes.size() - cur.pos_ < need) {
    throw ParseError("PGM: truncated pixel data (" + std::to_string(bytes.size() - cur.pos_) + " of " +
                         std::to_string(need) + " bytes)",
                     bytes.size());
  }
  img.pixels = Tensor(Shape{img.info.height, img.info.width});
  const double scale = 255.0 / static_cast<double>(img.info.maxval);
  const unsigned char* p = bytes.data() + cur.pos_;
  auto sample = [&](std::size_t k) {
    return bps == 1 ? static_cast<double>(p[k]) : static_cast<double>((p[2 * k] << 8) | p[2 * k + 1]);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double v = color ? 0.299 * sample(3 * i) + 0.587 * sample(3 * i + 1) + 0.114 * sample(3 * i + 2)
                           : sample(i);
    img.pixels[i] = v * scale;
  }
  return img;
}

inline Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what() + " at byte " + std::to_string(e.position()), e.position());
  }
}

/// Rounds half away from zero and clamps to [0, 255].
inline unsigned char to_byte(double v) {
  if (std::isnan(v)) return 0;
  return static_cast<unsigned char>(std::clamp(std::round(v), 0.0, 255.0));
}

inline std::vector<unsigned char> encode_pgm(const Tensor& t) {
  const std::size_t h = t.dim(-2), w = t.dim(-1);
  if (t.numel() != h * w) throw DimensionError("write_image: expected a single 2-D image, got " + shape_str(t.shape()));
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  for (double v : t.data()) out.push_back(to_byte(v));
  return out;
}

inline void write_image(const Tensor& t, const std::string& path) {
  const auto bytes = encode_pgm(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace gpsmamba
