#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mgtd::plot {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// 8-bit RGB raster with just enough drawing primitives for the report plots.
// Glyphs come from a built-in 3x5 bitmap font (digits, a handful of letters
// and punctuation); unknown characters render as blanks.
class Canvas {
 public:
  Canvas(int width, int height, Rgb background);

  int width() const { return width_; }
  int height() const { return height_; }

  void set_pixel(int x, int y, Rgb color);
  void fill_rect(int x, int y, int w, int h, Rgb color);
  void draw_line(int x0, int y0, int x1, int y1, Rgb color);
  void draw_text(int x, int y, const std::string& text, Rgb color,
                 int scale = 1);
  static int text_width(const std::string& text, int scale = 1);

  // Writes an 8-bit/channel truecolor PNG (zlib-compressed scanlines).
  void write_png(const std::filesystem::path& path) const;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> pixels_;  // RGB triples, row-major
};

void write_roc_png(const std::vector<std::pair<double, double>>& points,
                   double auc, const std::filesystem::path& path);

void write_confusion_png(std::size_t tn, std::size_t fp, std::size_t fn,
                         std::size_t tp, const std::filesystem::path& path);

// Vertical bar chart; labels render under the bars.
void write_histogram_png(const std::vector<std::string>& labels,
                         const std::vector<std::size_t>& counts,
                         const std::string& title,
                         const std::filesystem::path& path);

// Token-size trade-off: accuracy and throughput series over token sizes.
void write_tradeoff_png(const std::vector<int>& token_sizes,
                        const std::vector<double>& accuracies,
                        const std::vector<double>& throughputs,
                        const std::filesystem::path& path);

}  // namespace mgtd::plot
