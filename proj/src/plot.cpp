#include "mgtd/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>

#include <zlib.h>

#include "mgtd/common.hpp"

namespace mgtd::plot {

namespace {

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kBlack{20, 20, 20};
constexpr Rgb kGrey{200, 200, 200};
constexpr Rgb kBlue{40, 90, 200};
constexpr Rgb kOrange{220, 130, 30};

// 3x5 glyphs, one byte per row, low 3 bits used (MSB = left pixel).
const std::map<char, std::array<std::uint8_t, 5>>& font() {
  static const std::map<char, std::array<std::uint8_t, 5>> glyphs = {
      {'0', {0b111, 0b101, 0b101, 0b101, 0b111}},
      {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
      {'2', {0b111, 0b001, 0b111, 0b100, 0b111}},
      {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
      {'4', {0b101, 0b101, 0b111, 0b001, 0b001}},
      {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
      {'6', {0b111, 0b100, 0b111, 0b101, 0b111}},
      {'7', {0b111, 0b001, 0b001, 0b010, 0b010}},
      {'8', {0b111, 0b101, 0b111, 0b101, 0b111}},
      {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
      {'a', {0b010, 0b101, 0b111, 0b101, 0b101}},
      {'b', {0b110, 0b101, 0b110, 0b101, 0b110}},
      {'c', {0b011, 0b100, 0b100, 0b100, 0b011}},
      {'d', {0b110, 0b101, 0b101, 0b101, 0b110}},
      {'e', {0b111, 0b100, 0b110, 0b100, 0b111}},
      {'f', {0b111, 0b100, 0b110, 0b100, 0b100}},
      {'h', {0b101, 0b101, 0b111, 0b101, 0b101}},
      {'i', {0b111, 0b010, 0b010, 0b010, 0b111}},
      {'k', {0b101, 0b110, 0b100, 0b110, 0b101}},
      {'l', {0b100, 0b100, 0b100, 0b100, 0b111}},
      {'n', {0b101, 0b111, 0b111, 0b101, 0b101}},
      {'o', {0b010, 0b101, 0b101, 0b101, 0b010}},
      {'p', {0b111, 0b101, 0b111, 0b100, 0b100}},
      {'r', {0b111, 0b101, 0b110, 0b101, 0b101}},
      {'s', {0b011, 0b100, 0b010, 0b001, 0b110}},
      {'t', {0b111, 0b010, 0b010, 0b010, 0b010}},
      {'u', {0b101, 0b101, 0b101, 0b101, 0b111}},
      {'x', {0b101, 0b101, 0b010, 0b101, 0b101}},
      {'y', {0b101, 0b101, 0b010, 0b010, 0b010}},
      {'.', {0b000, 0b000, 0b000, 0b000, 0b010}},
      {'-', {0b000, 0b000, 0b111, 0b000, 0b000}},
      {'<', {0b001, 0b010, 0b100, 0b010, 0b001}},
      {'>', {0b100, 0b010, 0b001, 0b010, 0b100}},
      {'=', {0b000, 0b111, 0b000, 0b111, 0b000}},
      {'%', {0b101, 0b001, 0b010, 0b100, 0b101}},
      {'/', {0b001, 0b001, 0b010, 0b100, 0b100}},
      {' ', {0b000, 0b000, 0b000, 0b000, 0b000}},
  };
  return glyphs;
}

void append_be32(std::string* out, std::uint32_t v) {
  out->push_back(static_cast<char>((v >> 24) & 0xff));
  out->push_back(static_cast<char>((v >> 16) & 0xff));
  out->push_back(static_cast<char>((v >> 8) & 0xff));
  out->push_back(static_cast<char>(v & 0xff));
}

void append_chunk(std::string* out, const char type[4], const std::string& data) {
  append_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out->append(body);
  auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                   static_cast<uInt>(body.size()));
  append_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height) {
  pixels_.resize(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      set_pixel(x, y, background);
    }
  }
}

void Canvas::set_pixel(int x, int y, Rgb color) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) {
    return;
  }
  std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  pixels_[i] = color.r;
  pixels_[i + 1] = color.g;
  pixels_[i + 2] = color.b;
}

void Canvas::fill_rect(int x, int y, int w, int h, Rgb color) {
  for (int dy = 0; dy < h; ++dy) {
    for (int dx = 0; dx < w; ++dx) {
      set_pixel(x + dx, y + dy, color);
    }
  }
}

void Canvas::draw_line(int x0, int y0, int x1, int y1, Rgb color) {
  // Bresenham.
  int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set_pixel(x0, y0, color);
    if (x0 == x1 && y0 == y1) {
      break;
    }
    int e2 = 2 * err;
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

void Canvas::draw_text(int x, int y, const std::string& text, Rgb color,
                       int scale) {
  const auto& glyphs = font();
  int cx = x;
  for (char raw : text) {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    auto it = glyphs.find(c);
    if (it != glyphs.end()) {
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (it->second[static_cast<std::size_t>(row)] & (0b100 >> col)) {
            fill_rect(cx + col * scale, y + row * scale, scale, scale, color);
          }
        }
      }
    }
    cx += 4 * scale;
  }
}

int Canvas::text_width(const std::string& text, int scale) {
  return static_cast<int>(text.size()) * 4 * scale;
}

void Canvas::write_png(const std::filesystem::path& path) const {
  // Raw scanlines, filter byte 0 per row.
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(height_) * (1 + 3 * width_));
  for (int y = 0; y < height_; ++y) {
    raw.push_back(0);
    const std::uint8_t* row =
        pixels_.data() + static_cast<std::size_t>(y) * width_ * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(width_) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("PNG compression failed for " + path.string());
  }
  compressed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  append_be32(&ihdr, static_cast<std::uint32_t>(width_));
  append_be32(&ihdr, static_cast<std::uint32_t>(height_));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  append_chunk(&out, "IHDR", ihdr);
  append_chunk(&out, "IDAT",
               std::string(reinterpret_cast<char*>(compressed.data()),
                           compressed.size()));
  append_chunk(&out, "IEND", "");
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Report plots

void write_roc_png(const std::vector<std::pair<double, double>>& points,
                   double auc, const std::filesystem::path& path) {
  const int w = 480, h = 360, m = 40;
  Canvas canvas(w, h, kWhite);
  auto px = [&](double fpr) {
    return m + static_cast<int>(std::lround(fpr * (w - 2 * m)));
  };
  auto py = [&](double tpr) {
    return h - m - static_cast<int>(std::lround(tpr * (h - 2 * m)));
  };
  // Chance diagonal, then axes, then the curve.
  canvas.draw_line(px(0), py(0), px(1), py(1), kGrey);
  canvas.draw_line(px(0), py(0), px(1), py(0), kBlack);
  canvas.draw_line(px(0), py(0), px(0), py(1), kBlack);
  for (std::size_t i = 1; i < points.size(); ++i) {
    canvas.draw_line(px(points[i - 1].first), py(points[i - 1].second),
                     px(points[i].first), py(points[i].second), kBlue);
  }
  canvas.draw_text(m, 10, "roc", kBlack, 2);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "auc=%.3f", auc);
  canvas.draw_text(w - m - Canvas::text_width(buf, 2), 10, buf, kBlue, 2);
  canvas.draw_text(w / 2 - 10, h - 12, "fpr", kBlack, 1);
  canvas.draw_text(6, h / 2, "tpr", kBlack, 1);
  canvas.write_png(path);
}

void write_confusion_png(std::size_t tn, std::size_t fp, std::size_t fn,
                         std::size_t tp, const std::filesystem::path& path) {
  const int w = 360, h = 360, m = 50;
  Canvas canvas(w, h, kWhite);
  std::size_t counts[2][2] = {{tn, fp}, {fn, tp}};
  const char* names[2][2] = {{"tn", "fp"}, {"fn", "tp"}};
  std::size_t peak = std::max({tn, fp, fn, tp, std::size_t{1}});
  int cell_w = (w - 2 * m) / 2, cell_h = (h - 2 * m) / 2;
  for (int row = 0; row < 2; ++row) {
    for (int col = 0; col < 2; ++col) {
      double frac = static_cast<double>(counts[row][col]) /
                    static_cast<double>(peak);
      auto shade = static_cast<std::uint8_t>(255 - std::lround(frac * 160));
      Rgb fill{shade, shade, 255};
      int x = m + col * cell_w, y = m + row * cell_h;
      canvas.fill_rect(x, y, cell_w, cell_h, fill);
      canvas.draw_line(x, y, x + cell_w, y, kBlack);
      canvas.draw_line(x, y, x, y + cell_h, kBlack);
      std::string label = std::string(names[row][col]) + "=" +
                          std::to_string(counts[row][col]);
      canvas.draw_text(x + 8, y + cell_h / 2 - 4, label, kBlack, 2);
    }
  }
  canvas.draw_line(m, m + 2 * cell_h, m + 2 * cell_w, m + 2 * cell_h, kBlack);
  canvas.draw_line(m + 2 * cell_w, m, m + 2 * cell_w, m + 2 * cell_h, kBlack);
  canvas.draw_text(m, 16, "confusion", kBlack, 2);
  canvas.draw_text(m + cell_w - 30, h - 24, "predicted", kBlack, 1);
  canvas.draw_text(8, m + cell_h - 2, "label", kBlack, 1);
  canvas.write_png(path);
}

void write_histogram_png(const std::vector<std::string>& labels,
                         const std::vector<std::size_t>& counts,
                         const std::string& title,
                         const std::filesystem::path& path) {
  const int w = 560, h = 360, m = 40;
  Canvas canvas(w, h, kWhite);
  std::size_t peak = 1;
  for (auto c : counts) {
    peak = std::max(peak, c);
  }
  const int n = static_cast<int>(counts.size());
  const int slot = n > 0 ? (w - 2 * m) / n : 1;
  for (int i = 0; i < n; ++i) {
    double frac = static_cast<double>(counts[static_cast<std::size_t>(i)]) /
                  static_cast<double>(peak);
    int bar_h = static_cast<int>(std::lround(frac * (h - 2 * m)));
    int x = m + i * slot;
    canvas.fill_rect(x + 2, h - m - bar_h, slot - 4, bar_h, kBlue);
    canvas.draw_text(x + 2, h - m + 4, labels[static_cast<std::size_t>(i)],
                     kBlack, 1);
    canvas.draw_text(x + 2, h - m - bar_h - 8,
                     std::to_string(counts[static_cast<std::size_t>(i)]),
                     kBlack, 1);
  }
  canvas.draw_line(m, h - m, w - m, h - m, kBlack);
  canvas.draw_line(m, m, m, h - m, kBlack);
  canvas.draw_text(m, 10, title, kBlack, 2);
  canvas.write_png(path);
}

void write_tradeoff_png(const std::vector<int>& token_sizes,
                        const std::vector<double>& accuracies,
                        const std::vector<double>& throughputs,
                        const std::filesystem::path& path) {
  const int w = 560, h = 360, m = 50;
  Canvas canvas(w, h, kWhite);
  const int n = static_cast<int>(token_sizes.size());
  if (n == 0) {
    canvas.write_png(path);
    return;
  }
  double max_thr = 1e-12;
  for (double t : throughputs) {
    max_thr = std::max(max_thr, t);
  }
  auto px = [&](int i) {
    return n == 1 ? w / 2 : m + i * (w - 2 * m) / (n - 1);
  };
  auto py_acc = [&](double acc) {
    return h - m - static_cast<int>(std::lround(acc / 100.0 * (h - 2 * m)));
  };
  auto py_thr = [&](double thr) {
    return h - m - static_cast<int>(std::lround(thr / max_thr * (h - 2 * m)));
  };
  for (int i = 1; i < n; ++i) {
    canvas.draw_line(px(i - 1), py_acc(accuracies[static_cast<std::size_t>(i - 1)]),
                     px(i), py_acc(accuracies[static_cast<std::size_t>(i)]),
                     kBlue);
    canvas.draw_line(px(i - 1), py_thr(throughputs[static_cast<std::size_t>(i - 1)]),
                     px(i), py_thr(throughputs[static_cast<std::size_t>(i)]),
                     kOrange);
  }
  for (int i = 0; i < n; ++i) {
    canvas.fill_rect(px(i) - 2, py_acc(accuracies[static_cast<std::size_t>(i)]) - 2,
                     5, 5, kBlue);
    canvas.fill_rect(px(i) - 2, py_thr(throughputs[static_cast<std::size_t>(i)]) - 2,
                     5, 5, kOrange);
    canvas.draw_text(px(i) - 8, h - m + 6,
                     std::to_string(token_sizes[static_cast<std::size_t>(i)]),
                     kBlack, 1);
  }
  canvas.draw_line(m, h - m, w - m, h - m, kBlack);
  canvas.draw_line(m, m, m, h - m, kBlack);
  canvas.draw_text(m, 10, "token size tradeoff", kBlack, 2);
  canvas.draw_text(w - m - Canvas::text_width("acc", 2) -
                       Canvas::text_width(" ex/s", 2),
                   10, "acc", kBlue, 2);
  canvas.draw_text(w - m - Canvas::text_width("ex/s", 2), 10, "ex/s", kOrange,
                   2);
  canvas.write_png(path);
}

}  // namespace mgtd::plot
