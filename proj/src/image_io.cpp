#include "robustlens/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "robustlens/csv.hpp"

namespace robustlens {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::pair<Index, Index> plane_dims(const Tensor& img, Index channels) {
  if (img.rank() == 2 && channels == 1) return {img.dim(0), img.dim(1)};
  if (img.rank() == 4 && img.dim(0) == 1 && img.dim(1) == channels)
    return {img.dim(2), img.dim(3)};
  fail(ErrorCode::shape_mismatch,
       "expected a single " + std::to_string(channels) + "-channel image, got " +
           shape_str(img.shape));
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& img) {
  auto [h, w] = plane_dims(img, 1);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  f << "P5\n" << w << " " << h << "\n255\n";
  for (Index i = 0; i < h * w; ++i) f.put(static_cast<char>(to_byte(img.data[i])));
}

void write_ppm(const std::string& path, const Tensor& img) {
  auto [h, w] = plane_dims(img, 3);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  for (Index i = 0; i < h * w; ++i)
    for (Index c = 0; c < 3; ++c)
      f.put(static_cast<char>(to_byte(img.data[c * h * w + i])));
}

void write_image(const std::string& path_base, const Tensor& img) {
  Index channels = img.rank() == 4 ? img.dim(1) : 1;
  if (channels == 1)
    write_pgm(path_base + ".pgm", img);
  else if (channels == 3)
    write_ppm(path_base + ".ppm", img);
  else
    fail(ErrorCode::shape_mismatch,
         "no image format for " + std::to_string(channels) + " channels");
}

void write_svg_lines(const std::string& path, const std::string& title,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  if (series.empty()) fail(ErrorCode::bad_config, "svg plot needs at least one series");
  const double W = 640, H = 400, pad = 50;
  double lo = 0.0, hi = 1e-12;
  size_t len = 0;
  for (const auto& [name, ys] : series) {
    len = std::max(len, ys.size());
    for (double y : ys) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  }
  if (len < 1) fail(ErrorCode::bad_config, "svg plot needs nonempty series");
  double span = hi - lo;
  if (span <= 0.0) span = 1.0;

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b"};
  std::ofstream f(path);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\""
    << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
    << title << "</text>\n";
  f << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad
    << "\" y2=\"" << H - pad << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\""
    << H - pad << "\" stroke=\"black\"/>\n";
  size_t ci = 0;
  for (const auto& [name, ys] : series) {
    const char* color = colors[ci % 6];
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (size_t i = 0; i < ys.size(); ++i) {
      double x = pad + (W - 2 * pad) * (len > 1 ? static_cast<double>(i) /
                                                      static_cast<double>(len - 1)
                                                : 0.0);
      double y = H - pad - (H - 2 * pad) * ((ys[i] - lo) / span);
      f << format_double(x) << "," << format_double(y) << " ";
    }
    f << "\"/>\n";
    f << "<text x=\"" << W - pad + 4 << "\" y=\"" << pad + 16 * static_cast<double>(ci)
      << "\" font-size=\"12\" fill=\"" << color << "\">" << name << "</text>\n";
    ++ci;
  }
  f << "</svg>\n";
}

}  // namespace robustlens
