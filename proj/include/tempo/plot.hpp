#pragma once

#include <array>
#include <vector>

#include "tempo/image.hpp"

namespace tempo {

// One point set with a fill color and a dot radius in pixels.
struct ScatterSeries {
  std::vector<std::array<double, 2>> points;
  std::array<double, 3> rgb{0.0, 0.0, 0.0};
  double radius = 3.0;
};

// Renders the series (later ones on top) onto a white canvas, with bounds
// fitted to all points plus a margin.  Degenerate bounds fall back to a unit
// box so single-point plots still render.
Frame render_scatter(const std::vector<ScatterSeries>& series, int h, int w);

}  // namespace tempo
