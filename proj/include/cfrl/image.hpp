#pragma once

#include <string>
#include <vector>

#include "cfrl/env.hpp"

namespace cfrl {

// Grayscale frame writers; values are clamped to [0,1] and quantised to 8 bit.
void write_ppm(const std::string& path, const std::vector<float>& frame, int h, int w);
void write_png_gray(const std::string& path, const std::vector<float>& frame, int h, int w);

// All K frames of a stacked observation, tiled left to right.
std::vector<float> tile_frames(const RasterObs& obs, int gap, int* out_h, int* out_w);

// Original over counterfactual, frames tiled horizontally per row.
void write_cf_panel_png(const std::string& path, const RasterObs& original, const RasterObs& cf);

// Minimal PPM (P6) reader for round-trip tests.
std::vector<float> read_ppm(const std::string& path, int* out_h, int* out_w);

}  // namespace cfrl
