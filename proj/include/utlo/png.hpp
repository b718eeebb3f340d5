#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "utlo/checkpoint.hpp"  // write_file / read_file
#include "utlo/common.hpp"

namespace utlo {

// Minimal 8-bit RGB PNG writer. The zlib stream uses stored (uncompressed)
// deflate blocks, so output is deterministic and needs no compression
// library. Good enough for plots and sample grids.

namespace pngdetail {

inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xffffffffu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

inline uint32_t adler32(const uint8_t* data, size_t len) {
  uint32_t a = 1, b = 0;
  for (size_t i = 0; i < len; ++i) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& payload) {
  put_be32(out, static_cast<uint32_t>(payload.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_be32(out, crc32(body.data(), body.size()));
}

}  // namespace pngdetail

// rgb: height x width x 3, row-major
inline std::vector<uint8_t> encode_png(const uint8_t* rgb, int width, int height) {
  using namespace pngdetail;
  std::vector<uint8_t> raw;  // filter byte 0 + row data
  raw.reserve(static_cast<size_t>(height) * (1 + 3 * width));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb + static_cast<int64_t>(y) * width * 3,
               rgb + static_cast<int64_t>(y + 1) * width * 3);
  }
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t pos = 0;
  while (pos < raw.size() || raw.empty()) {
    const size_t n = std::min<size_t>(65535, raw.size() - pos);
    const bool final = (pos + n == raw.size());
    z.push_back(final ? 1 : 0);
    z.push_back(static_cast<uint8_t>(n & 0xff));
    z.push_back(static_cast<uint8_t>(n >> 8));
    z.push_back(static_cast<uint8_t>(~n & 0xff));
    z.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + n);
    pos += n;
    if (final) break;
  }
  put_be32(z, adler32(raw.data(), raw.size()));

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(width));
  put_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const std::string& path, const uint8_t* rgb, int width, int height) {
  write_file(path, encode_png(rgb, width, height));
}

// Decoder for PNGs produced by encode_png (stored deflate blocks, filter 0
// only); used by verification code that reads artifacts back.
struct DecodedPng {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;
};

inline DecodedPng decode_png(const std::vector<uint8_t>& bytes) {
  using namespace pngdetail;
  if (bytes.size() < 8 || bytes[1] != 'P' || bytes[2] != 'N' || bytes[3] != 'G')
    throw FormatError("png: bad signature");
  DecodedPng out;
  size_t pos = 8;
  std::vector<uint8_t> idat;
  auto be32 = [&](size_t p) {
    return (static_cast<uint32_t>(bytes[p]) << 24) | (static_cast<uint32_t>(bytes[p + 1]) << 16) |
           (static_cast<uint32_t>(bytes[p + 2]) << 8) | bytes[p + 3];
  };
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = be32(pos);
    const std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    if (pos + 12 + len > bytes.size()) throw FormatError("png: truncated chunk");
    const uint8_t* payload = bytes.data() + pos + 8;
    if (type == "IHDR") {
      out.width = static_cast<int>(be32(pos + 8));
      out.height = static_cast<int>(be32(pos + 12));
      if (payload[8] != 8 || payload[9] != 2) throw FormatError("png: unsupported format");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    }
    pos += 12 + len;
    if (type == "IEND") break;
  }
  // inflate stored blocks
  if (idat.size() < 6) throw FormatError("png: empty IDAT");
  size_t p = 2;
  std::vector<uint8_t> raw;
  while (true) {
    if (p + 5 > idat.size()) throw FormatError("png: truncated deflate stream");
    const uint8_t header = idat[p];
    if ((header & 0x06) != 0) throw FormatError("png: only stored deflate blocks supported");
    const size_t n = idat[p + 1] | (idat[p + 2] << 8);
    p += 5;
    if (p + n > idat.size()) throw FormatError("png: truncated stored block");
    raw.insert(raw.end(), idat.begin() + p, idat.begin() + p + n);
    p += n;
    if (header & 1) break;
  }
  const size_t stride = 1 + 3 * static_cast<size_t>(out.width);
  if (raw.size() != stride * out.height) throw FormatError("png: wrong payload size");
  out.rgb.resize(static_cast<size_t>(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y) {
    if (raw[y * stride] != 0) throw FormatError("png: only filter 0 supported");
    std::memcpy(out.rgb.data() + static_cast<size_t>(y) * out.width * 3,
                raw.data() + y * stride + 1, 3 * out.width);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tiny raster canvas for plots, grids and heat maps.
// ---------------------------------------------------------------------------

struct Color {
  uint8_t r = 0, g = 0, b = 0;
};

class Canvas {
 public:
  Canvas(int width, int height, Color bg = {255, 255, 255}) : w_(width), h_(height) {
    pix_.resize(static_cast<size_t>(w_) * h_ * 3);
    fill_rect(0, 0, w_, h_, bg);
  }

  int width() const { return w_; }
  int height() const { return h_; }

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    uint8_t* p = pix_.data() + (static_cast<size_t>(y) * w_ + x) * 3;
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  Color get(int x, int y) const {
    const uint8_t* p = pix_.data() + (static_cast<size_t>(y) * w_ + x) * 3;
    return {p[0], p[1], p[2]};
  }

  void fill_rect(int x, int y, int w, int h, Color c) {
    for (int yy = y; yy < y + h; ++yy)
      for (int xx = x; xx < x + w; ++xx) set(xx, yy, c);
  }

  void line(int x0, int y0, int x1, int y1, Color c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  // 5x7 glyphs, charset limited to what plot labels need
  void text(int x, int y, const std::string& s, Color c) {
    for (char raw : s) {
      const char ch = raw;
      const auto it = font().find(ch);
      if (it != font().end()) {
        for (int row = 0; row < 7; ++row)
          for (int col = 0; col < 5; ++col)
            if (it->second[row] & (1 << (4 - col))) set(x + col, y + row, c);
      }
      x += 6;
    }
  }

  void blit_rgb(int x, int y, const uint8_t* rgb, int w, int h) {
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        const uint8_t* p = rgb + (static_cast<size_t>(yy) * w + xx) * 3;
        set(x + xx, y + yy, {p[0], p[1], p[2]});
      }
  }

  void save(const std::string& path) const { write_png(path, pix_.data(), w_, h_); }
  const std::vector<uint8_t>& pixels() const { return pix_; }

 private:
  static const std::map<char, std::array<uint8_t, 7>>& font() {
    static const std::map<char, std::array<uint8_t, 7>> f = {
        {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
        {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
        {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
        {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
        {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
        {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
        {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
        {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
        {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
        {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
        {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
        {'f', {0x06, 0x09, 0x08, 0x1c, 0x08, 0x08, 0x08}},
        {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e}},
        {'d', {0x01, 0x01, 0x0d, 0x13, 0x11, 0x13, 0x0d}},
        {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
        {'s', {0x00, 0x00, 0x0f, 0x10, 0x0e, 0x01, 0x1e}},
        {'t', {0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06}},
        {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
        {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
        {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d}},
        {'c', {0x00, 0x00, 0x0e, 0x10, 0x10, 0x11, 0x0e}},
        {'o', {0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e}},
        {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
        {'a', {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f}},
        {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x19, 0x16}},
        {'m', {0x00, 0x00, 0x1a, 0x15, 0x15, 0x15, 0x15}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return f;
  }

  int w_, h_;
  std::vector<uint8_t> pix_;
};

}  // namespace utlo
