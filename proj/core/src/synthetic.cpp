#include "crownpipe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "crownpipe/error.hpp"
#include "crownpipe/labeling.hpp"
#include "crownpipe/random.hpp"

namespace crownpipe::synthetic {

namespace fs = std::filesystem;

namespace {

struct Species {
  double r, g, b;
  double height;      // crown base above ground, m
  double fine_noise;  // per-pixel amplitude
  double blotch;      // amplitude of coarse value noise
  double stripes;     // amplitude of radial stripes
};

// Indexed like kSpeciesClasses.
constexpr Species kSpecies[4] = {
    {205, 165, 70, 8.0, 8.0, 0.0, 0.0},
    {165, 85, 55, 14.0, 4.0, 0.0, 22.0},
    {45, 95, 55, 11.0, 4.0, 28.0, 0.0},
    {95, 175, 160, 18.0, 3.0, 0.0, 0.0},
};
constexpr double kGround[3] = {118, 104, 82};
constexpr double kDomeRelief = 0.05;  // m, keeps interior slopes gentle

// Bilinearly interpolated lattice noise in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(int width, int height, int cell, Rng& rng)
      : cell_(cell), nx_(width / cell + 2), ny_(height / cell + 2) {
    lattice_.resize(static_cast<std::size_t>(nx_) * ny_);
    for (auto& v : lattice_) v = rng.uniform(-1.0, 1.0);
  }
  double at(int x, int y) const {
    const double fx = static_cast<double>(x) / cell_;
    const double fy = static_cast<double>(y) / cell_;
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const double tx = fx - x0;
    const double ty = fy - y0;
    auto v = [&](int i, int j) { return lattice_[static_cast<std::size_t>(j) * nx_ + i]; };
    return (1 - ty) * ((1 - tx) * v(x0, y0) + tx * v(x0 + 1, y0)) +
           ty * ((1 - tx) * v(x0, y0 + 1) + tx * v(x0 + 1, y0 + 1));
  }

 private:
  int cell_, nx_, ny_;
  std::vector<double> lattice_;
};

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  if (spec.size < 64 || spec.pixel_size <= 0 || spec.dem_pixel_size <= 0 ||
      spec.min_radius < 2 || spec.max_radius < spec.min_radius ||
      spec.spacing < 2 * spec.max_radius + 4)
    throw PreconditionError("invalid synthetic scene spec");

  Rng rng(spec.seed);
  Scene scene;
  const int n = spec.size;
  scene.ortho_grid = {n, n, spec.origin_x, spec.origin_y, spec.pixel_size};

  // Crowns on a jittered lattice, never touching each other.
  const int cells = n / spec.spacing;
  const int margin = (n - cells * spec.spacing) / 2;
  for (int gy = 0; gy < cells; ++gy) {
    for (int gx = 0; gx < cells; ++gx) {
      Crown c;
      c.radius = spec.min_radius +
                 static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_radius - spec.min_radius + 1)));
      const int slack = spec.spacing / 2 - c.radius - 2;
      const auto jitter = [&] {
        return static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * slack + 1))) - slack;
      };
      c.cx = margin + gx * spec.spacing + spec.spacing / 2 + jitter();
      c.cy = margin + gy * spec.spacing + spec.spacing / 2 + jitter();
      c.tree_class = kSpeciesClasses[rng.below(4)];
      scene.crowns.push_back(c);
    }
  }

  // Per-pixel owning crown (-1 = ground) in ortho pixel space.
  std::vector<int> owner(static_cast<std::size_t>(n) * n, -1);
  for (std::size_t k = 0; k < scene.crowns.size(); ++k) {
    const auto& c = scene.crowns[k];
    for (int y = std::max(0, c.cy - c.radius); y <= std::min(n - 1, c.cy + c.radius); ++y)
      for (int x = std::max(0, c.cx - c.radius); x <= std::min(n - 1, c.cx + c.radius); ++x) {
        const int dx = x - c.cx, dy = y - c.cy;
        if (dx * dx + dy * dy <= c.radius * c.radius)
          owner[static_cast<std::size_t>(y) * n + x] = static_cast<int>(k);
      }
  }
  auto species_of = [&](const Crown& c) {
    const auto* it = std::find(std::begin(kSpeciesClasses), std::end(kSpeciesClasses), c.tree_class);
    return kSpecies[it - std::begin(kSpeciesClasses)];
  };

  const ValueNoise ground_noise(n, n, 16, rng);
  const ValueNoise blotch_noise(n, n, 4, rng);
  scene.ortho = RgbImage(n, n);
  scene.truth.grid = scene.ortho_grid;
  scene.truth.values.assign(static_cast<std::size_t>(n) * n, labeling::kOthers);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const auto i = static_cast<std::size_t>(y) * n + x;
      double rgb[3];
      if (owner[i] < 0) {
        const double shade = 12.0 * ground_noise.at(x, y);
        for (int ch = 0; ch < 3; ++ch) rgb[ch] = kGround[ch] + shade + rng.uniform(-10.0, 10.0);
      } else {
        const auto& c = scene.crowns[static_cast<std::size_t>(owner[i])];
        const auto& sp = species_of(c);
        scene.truth.values[i] = c.tree_class;
        const double dx = x - c.cx, dy = y - c.cy;
        const double d = std::min(1.0, std::hypot(dx, dy) / c.radius);
        const double shade = 0.75 + 0.25 * std::sqrt(1.0 - d * d);
        double tex = sp.blotch * blotch_noise.at(x, y);
        if (sp.stripes > 0) tex += sp.stripes * std::sin(8.0 * std::atan2(dy, dx));
        const double base[3] = {sp.r, sp.g, sp.b};
        for (int ch = 0; ch < 3; ++ch)
          rgb[ch] = shade * base[ch] + tex + rng.uniform(-sp.fine_noise, sp.fine_noise);
      }
      scene.ortho.set(x, y, {to_byte(rgb[0]), to_byte(rgb[1]), to_byte(rgb[2])});
    }
  }

  // DEM on its own coarser grid covering the ortho extent.
  const double extent = n * spec.pixel_size;
  const int dn = static_cast<int>(std::ceil(extent / spec.dem_pixel_size - 1e-9));
  raster::Grid dgrid{dn, dn, spec.origin_x, spec.origin_y, spec.dem_pixel_size};
  scene.dem = raster::Band(dgrid);
  for (int r = 0; r < dn; ++r) {
    for (int col = 0; col < dn; ++col) {
      const double wx = dgrid.center_x(col) - spec.origin_x;
      const double wy = spec.origin_y - dgrid.center_y(r);
      double z = 120.0 + 0.05 * wx + 0.03 * wy;
      const int px = static_cast<int>(std::floor(wx / spec.pixel_size));
      const int py = static_cast<int>(std::floor(wy / spec.pixel_size));
      if (px >= 0 && px < n && py >= 0 && py < n) {
        const int k = owner[static_cast<std::size_t>(py) * n + px];
        if (k >= 0) {
          const auto& c = scene.crowns[static_cast<std::size_t>(k)];
          const double dx = wx / spec.pixel_size - (c.cx + 0.5);
          const double dy = wy / spec.pixel_size - (c.cy + 0.5);
          const double q = std::min(1.0, (dx * dx + dy * dy) / (c.radius * c.radius));
          z += species_of(c).height + kDomeRelief * (1.0 - q);
        }
      }
      scene.dem.at(col, r) = z;
    }
  }
  return scene;
}

ScenePaths write_scene(const Scene& scene, const fs::path& dir) {
  fs::create_directories(dir);
  ScenePaths p{dir / "ortho.png", dir / "dem.asc", dir / "truth.asc"};
  write_png_rgb(p.ortho, scene.ortho);
  raster::write_grid_sidecar(p.ortho, scene.ortho_grid);
  raster::write_ascii_grid(p.dem, scene.dem);
  raster::write_int_ascii_grid(p.truth, scene.truth);
  return p;
}

}  // namespace crownpipe::synthetic
