#pragma once

// Run report: report.json, PNG curves and probe panels, all derived from the
// files of a run directory.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "regen/image_io.hpp"
#include "regen/types.hpp"

namespace regen::report {

inline constexpr int kPanelTiles = 5;

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::array<std::uint8_t, 3> color{0, 0, 0};
};

// Raster line plot with axes; non-finite points are skipped.
io::Rgb8 line_plot(const std::vector<Series>& series, int width = 480, int height = 240);

// Colour rendering of a label map; ignore pixels are black.
io::Rgb8 colorize(const LabelMap& labels);

// Concatenates equally sized tiles left to right.
io::Rgb8 hstack(const std::vector<io::Rgb8>& tiles);

// Writes <run>/report/ and returns the report document. Throws when the
// metrics CSV is missing, naming the expected path.
nlohmann::json emit_report(const std::filesystem::path& run_dir);

}  // namespace regen::report
