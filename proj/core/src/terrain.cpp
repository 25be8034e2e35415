#include "crownpipe/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "crownpipe/error.hpp"

namespace crownpipe::terrain {

SlopeBand slope(const raster::Band& dem) {
  const auto& grid = dem.grid();
  if (grid.width < 2 || grid.height < 2)
    throw PreconditionError("slope needs a DEM of at least 2x2 cells");
  if (!(grid.pixel_size > 0.0)) throw PreconditionError("slope needs pixel_size > 0");

  raster::Band out(grid);
  const int w = grid.width;
  const int h = grid.height;
  const double denom = 8.0 * grid.pixel_size;

  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      // z[dy+1][dx+1], border cells replicated.
      double z[3][3];
      bool masked = false;
      for (int dy = -1; dy <= 1 && !masked; ++dy) {
        const int r = std::clamp(row + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int c = std::clamp(col + dx, 0, w - 1);
          if (dem.is_nodata(c, r)) {
            masked = true;
            break;
          }
          z[dy + 1][dx + 1] = dem.at(c, r);
        }
      }
      if (masked) {
        out.set_nodata(col, row);
        continue;
      }
      const double dzdx =
          ((z[0][2] + 2 * z[1][2] + z[2][2]) - (z[0][0] + 2 * z[1][0] + z[2][0])) / denom;
      const double dzdy =
          ((z[2][0] + 2 * z[2][1] + z[2][2]) - (z[0][0] + 2 * z[0][1] + z[0][2])) / denom;
      out.at(col, row) = std::atan(std::hypot(dzdx, dzdy)) * 180.0 / std::numbers::pi;
    }
  }
  return SlopeBand(std::move(out));
}

}  // namespace crownpipe::terrain
