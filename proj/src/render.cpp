#include "lac/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <zlib.h>

namespace lac {

namespace {

struct Color {
  unsigned char r, g, b;
};

constexpr Color kBackground{255, 255, 255};
constexpr Color kJoint{40, 40, 40};
// Limb palette: spine/head, left arm, right arm, left leg, right leg.
constexpr Color kLimbPalette[5] = {{20, 20, 20},
                                   {200, 40, 40},
                                   {40, 80, 200},
                                   {30, 150, 60},
                                   {220, 140, 20}};

// Limb group of an edge in the default 13-joint topology; other topologies
// cycle the palette by edge index.
int limb_group(const SkeletonTopology& topo, int edge_index) {
  if (topo.num_joints == 13 && topo.edges.size() == 12) {
    const int child = topo.edges[edge_index].second;
    switch (child) {
      case 0: case 1: return 0;
      case 2: case 4: case 6: return 1;
      case 3: case 5: case 7: return 2;
      case 9: case 11: return 3;
      case 10: case 12: return 4;
      default: return 0;
    }
  }
  return edge_index % 5;
}

class Canvas {
 public:
  Canvas(int size) : size_(size), rgb_(static_cast<size_t>(size) * size * 3) {
    clear();
  }

  void clear() {
    for (size_t i = 0; i < rgb_.size(); i += 3) {
      rgb_[i] = kBackground.r;
      rgb_[i + 1] = kBackground.g;
      rgb_[i + 2] = kBackground.b;
    }
  }

  void set(int x, int y, const Color& c) {
    if (x < 0 || y < 0 || x >= size_ || y >= size_) return;
    const size_t at = (static_cast<size_t>(y) * size_ + x) * 3;
    rgb_[at] = c.r;
    rgb_[at + 1] = c.g;
    rgb_[at + 2] = c.b;
  }

  void thick_point(int x, int y, const Color& c) {
    set(x, y, c);
    set(x + 1, y, c);
    set(x, y + 1, c);
    set(x + 1, y + 1, c);
  }

  void line(int x0, int y0, int x1, int y1, const Color& c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      thick_point(x0, y0, c);
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

  void disc(int cx, int cy, int radius, const Color& c) {
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx)
        if (dx * dx + dy * dy <= radius * radius) set(cx + dx, cy + dy, c);
  }

  const std::vector<unsigned char>& rgb() const { return rgb_; }
  int size() const { return size_; }

 private:
  int size_;
  std::vector<unsigned char> rgb_;
};

void append_u32_be(std::string* out, uint32_t v) {
  out->push_back(static_cast<char>((v >> 24) & 0xFF));
  out->push_back(static_cast<char>((v >> 16) & 0xFF));
  out->push_back(static_cast<char>((v >> 8) & 0xFF));
  out->push_back(static_cast<char>(v & 0xFF));
}

void append_chunk(std::string* out, const char type[4], const std::string& data) {
  append_u32_be(out, static_cast<uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out->append(body);
  const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                          static_cast<uInt>(body.size()));
  append_u32_be(out, static_cast<uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, const std::vector<unsigned char>& rgb,
               int width, int height) {
  if (rgb.size() != static_cast<size_t>(width) * height * 3)
    throw Error("write_png: buffer size mismatch");

  std::vector<unsigned char> raw;
  raw.reserve(rgb.size() + height);
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), rgb.begin() + static_cast<size_t>(y) * width * 3,
               rgb.begin() + static_cast<size_t>(y + 1) * width * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("write_png: deflate failed");
  compressed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  append_u32_be(&ihdr, static_cast<uint32_t>(width));
  append_u32_be(&ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(&out, "IHDR", ihdr);
  append_chunk(&out, "IDAT",
               std::string(reinterpret_cast<const char*>(compressed.data()),
                           compressed.size()));
  append_chunk(&out, "IEND", "");

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_png: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write_png: write failed for " + path);
}

namespace {

// GIF89a writer with a fixed palette. The LZW stream is emitted in literal
// mode with periodic clear codes, which keeps the encoder trivially in sync
// with any decoder.
class GifWriter {
 public:
  GifWriter(const std::string& path, int size, const std::vector<Color>& palette,
            int delay_cs)
      : file_(path, std::ios::binary), size_(size), delay_cs_(delay_cs) {
    if (!file_) throw Error("render: cannot open " + path);
    palette_ = palette;
    while (palette_.size() < 8) palette_.push_back({0, 0, 0});
    if (palette_.size() > 8) throw Error("render: palette too large");

    file_ << "GIF89a";
    put_u16(size_);
    put_u16(size_);
    file_.put(static_cast<char>(0xF2));  // global table, 8 entries, 8-bit color
    file_.put(0);                        // background index
    file_.put(0);                        // aspect
    for (const auto& c : palette_) {
      file_.put(static_cast<char>(c.r));
      file_.put(static_cast<char>(c.g));
      file_.put(static_cast<char>(c.b));
    }
    // Netscape looping extension: loop forever.
    const unsigned char loop[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C',
                                  'A',  'P',  'E',  '2', '.', '0', 0x03, 0x01,
                                  0x00, 0x00, 0x00};
    file_.write(reinterpret_cast<const char*>(loop), sizeof(loop));
  }

  void add_frame(const std::vector<unsigned char>& indexed) {
    // Graphic control extension with the frame delay.
    const unsigned char gce[] = {0x21, 0xF9, 0x04, 0x00,
                                 static_cast<unsigned char>(delay_cs_ & 0xFF),
                                 static_cast<unsigned char>((delay_cs_ >> 8) & 0xFF),
                                 0x00, 0x00};
    file_.write(reinterpret_cast<const char*>(gce), sizeof(gce));

    file_.put(0x2C);  // image descriptor
    put_u16(0);
    put_u16(0);
    put_u16(size_);
    put_u16(size_);
    file_.put(0);  // no local table, not interlaced

    // Literal-mode LZW: min code size 7, clear every 126 literals so the
    // decoder's table never forces a wider code.
    const int min_code = 7;
    file_.put(static_cast<char>(min_code));
    const int clear = 1 << min_code;
    const int end = clear + 1;
    BitPacker packer(&file_);
    packer.put(clear, min_code + 1);
    int since_clear = 0;
    for (const unsigned char px : indexed) {
      packer.put(px, min_code + 1);
      if (++since_clear == 126) {
        packer.put(clear, min_code + 1);
        since_clear = 0;
      }
    }
    packer.put(end, min_code + 1);
    packer.finish();
  }

  void close() {
    file_.put(0x3B);  // trailer
    if (!file_) throw Error("render: gif write failed");
    file_.close();
  }

 private:
  class BitPacker {
   public:
    explicit BitPacker(std::ofstream* file) : file_(file) {}
    void put(int code, int bits) {
      acc_ |= static_cast<uint32_t>(code) << filled_;
      filled_ += bits;
      while (filled_ >= 8) {
        block_.push_back(static_cast<unsigned char>(acc_ & 0xFF));
        acc_ >>= 8;
        filled_ -= 8;
        if (block_.size() == 255) flush_block();
      }
    }
    void finish() {
      if (filled_ > 0) {
        block_.push_back(static_cast<unsigned char>(acc_ & 0xFF));
        acc_ = 0;
        filled_ = 0;
        if (block_.size() == 255) flush_block();
      }
      if (!block_.empty()) flush_block();
      file_->put(0);  // block terminator
    }

   private:
    void flush_block() {
      file_->put(static_cast<char>(block_.size()));
      file_->write(reinterpret_cast<const char*>(block_.data()),
                   static_cast<std::streamsize>(block_.size()));
      block_.clear();
    }
    std::ofstream* file_;
    uint32_t acc_ = 0;
    int filled_ = 0;
    std::vector<unsigned char> block_;
  };

  void put_u16(int v) {
    file_.put(static_cast<char>(v & 0xFF));
    file_.put(static_cast<char>((v >> 8) & 0xFF));
  }

  std::ofstream file_;
  int size_;
  int delay_cs_;
  std::vector<Color> palette_;
};

int palette_index(const Color& c, const std::vector<Color>& palette) {
  for (size_t i = 0; i < palette.size(); ++i)
    if (palette[i].r == c.r && palette[i].g == c.g && palette[i].b == c.b)
      return static_cast<int>(i);
  return 0;
}

}  // namespace

RenderResult render_sequence(const SkeletonSequence& seq,
                             const SkeletonTopology& topo,
                             const std::string& out_prefix,
                             const RenderOptions& options) {
  const ValidationReport report = validate_sequence(seq, topo);
  if (!report.ok()) throw Error("render: " + report.violations.front());
  if (options.canvas < 16) throw Error("render: canvas too small");

  // A fixed canvas transform from the whole sequence's bounding box.
  double min_x = seq.at(0, 0, 0), max_x = min_x;
  double min_y = seq.at(0, 0, 1), max_y = min_y;
  for (int t = 0; t < seq.length(); ++t)
    for (int v = 0; v < seq.num_joints; ++v) {
      min_x = std::min(min_x, seq.at(t, v, 0));
      max_x = std::max(max_x, seq.at(t, v, 0));
      min_y = std::min(min_y, seq.at(t, v, 1));
      max_y = std::max(max_y, seq.at(t, v, 1));
    }
  const double extent = std::max({max_x - min_x, max_y - min_y, 1e-9});
  const double pad = 0.1 * extent;
  const double scale = (options.canvas - 1) / (extent + 2 * pad);
  const double cx = 0.5 * (min_x + max_x);
  const double cy = 0.5 * (min_y + max_y);
  auto to_px = [&](double x) {
    return static_cast<int>(std::lround((x - cx) * scale + options.canvas / 2.0));
  };
  auto to_py = [&](double y) {  // y grows upward in skeleton space
    return static_cast<int>(std::lround((cy - y) * scale + options.canvas / 2.0));
  };

  std::vector<Color> palette = {kBackground, kJoint};
  for (const auto& c : kLimbPalette) palette.push_back(c);

  RenderResult result;
  const int delay_cs = std::max(2, static_cast<int>(std::lround(100.0 / seq.fps)));
  GifWriter* gif = nullptr;
  std::unique_ptr<GifWriter> gif_holder;
  if (options.animation) {
    gif_holder = std::make_unique<GifWriter>(out_prefix + ".gif", options.canvas,
                                             palette, delay_cs);
    gif = gif_holder.get();
    result.files.push_back(out_prefix + ".gif");
  }

  Canvas canvas(options.canvas);
  for (int t = 0; t < seq.length(); ++t) {
    canvas.clear();
    for (size_t e = 0; e < topo.edges.size(); ++e) {
      const auto [p, c] = topo.edges[e];
      canvas.line(to_px(seq.at(t, p, 0)), to_py(seq.at(t, p, 1)),
                  to_px(seq.at(t, c, 0)), to_py(seq.at(t, c, 1)),
                  kLimbPalette[limb_group(topo, static_cast<int>(e))]);
    }
    for (int v = 0; v < seq.num_joints; ++v)
      canvas.disc(to_px(seq.at(t, v, 0)), to_py(seq.at(t, v, 1)), 2, kJoint);

    if (options.per_frame_pngs) {
      char name[32];
      std::snprintf(name, sizeof(name), "_f%05d.png", t);
      const std::string path = out_prefix + name;
      write_png(path, canvas.rgb(), options.canvas, options.canvas);
      result.files.push_back(path);
    }
    if (gif) {
      std::vector<unsigned char> indexed(static_cast<size_t>(options.canvas) *
                                         options.canvas);
      const auto& rgb = canvas.rgb();
      for (size_t i = 0; i < indexed.size(); ++i)
        indexed[i] = static_cast<unsigned char>(palette_index(
            {rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]}, palette));
      gif->add_frame(indexed);
    }
  }
  if (gif) gif->close();
  return result;
}

}  // namespace lac
