#pragma once

#include "crownpipe/raster.hpp"

namespace crownpipe::terrain {

// Slope in degrees, every value in [0, 90]. Same grid as the source DEM.
class SlopeBand {
 public:
  explicit SlopeBand(raster::Band band) : band_(std::move(band)) {}
  const raster::Band& band() const& noexcept { return band_; }
  // Moves out of temporaries instead of copying.
  raster::Band band() && { return std::move(band_); }
  raster::Band release() && { return std::move(band_); }

 private:
  raster::Band band_;
};

// Per-cell maximum rate of elevation change from the 3x3 weighted (1,2,1)
// finite-difference kernel. Borders replicate edge cells; any cell whose 3x3
// neighbourhood touches nodata is nodata. Requires at least a 2x2 DEM.
SlopeBand slope(const raster::Band& dem);

}  // namespace crownpipe::terrain
