#pragma once

#include <map>
#include <string>
#include <vector>

#include "robustlens/tensor.hpp"

namespace robustlens {

/// Write a [1,1,H,W] (or [H,W]) tensor in [0,1] as binary PGM.
void write_pgm(const std::string& path, const Tensor& img);

/// Write a [1,3,H,W] tensor in [0,1] as binary PPM.
void write_ppm(const std::string& path, const Tensor& img);

/// Grayscale when C=1, PPM when C=3.
void write_image(const std::string& path_base, const Tensor& img);

/// Minimal deterministic SVG line plot, one polyline per series.
void write_svg_lines(const std::string& path, const std::string& title,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace robustlens
