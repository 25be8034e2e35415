// ESRI ASCII grid ("AAIGrid") reader and writer.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "crownpipe/error.hpp"
#include "crownpipe/raster.hpp"

namespace crownpipe::raster {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double parse_double(std::string_view tok, const std::string& where) {
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw IoError(where + ": cannot parse number '" + std::string(tok) + "'");
  return v;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

struct Header {
  Grid grid;
  std::optional<double> nodata;
};

struct Parsed {
  Header header;
  std::vector<std::vector<std::string>> rows;
};

Parsed parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string where = path.string();

  std::map<std::string, std::string> keys;
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    const bool is_key = rows.empty() && std::isalpha(static_cast<unsigned char>(tokens[0][0]));
    if (is_key) {
      if (tokens.size() != 2) throw IoError(where + ": malformed header line '" + line + "'");
      keys[lower(tokens[0])] = tokens[1];
    } else {
      rows.push_back(std::move(tokens));
    }
  }

  auto require = [&](const char* k) -> double {
    auto it = keys.find(k);
    if (it == keys.end()) throw IoError(where + ": malformed header, missing " + k);
    return parse_double(it->second, where);
  };

  Header h;
  const double ncols = require("ncols");
  const double nrows = require("nrows");
  if (ncols < 1 || nrows < 1 || ncols != std::floor(ncols) || nrows != std::floor(nrows))
    throw IoError(where + ": malformed header, ncols/nrows must be positive integers");
  h.grid.width = static_cast<int>(ncols);
  h.grid.height = static_cast<int>(nrows);
  h.grid.pixel_size = require("cellsize");
  if (!(h.grid.pixel_size > 0)) throw IoError(where + ": malformed header, cellsize <= 0");

  double xll = 0.0;
  double yll = 0.0;
  if (keys.count("xllcorner")) {
    xll = require("xllcorner");
  } else if (keys.count("xllcenter")) {
    xll = require("xllcenter") - 0.5 * h.grid.pixel_size;
  } else {
    throw IoError(where + ": malformed header, missing xllcorner");
  }
  if (keys.count("yllcorner")) {
    yll = require("yllcorner");
  } else if (keys.count("yllcenter")) {
    yll = require("yllcenter") - 0.5 * h.grid.pixel_size;
  } else {
    throw IoError(where + ": malformed header, missing yllcorner");
  }
  h.grid.origin_x = xll;
  h.grid.origin_y = yll + h.grid.height * h.grid.pixel_size;
  if (keys.count("nodata_value")) h.nodata = require("nodata_value");

  if (static_cast<int>(rows.size()) != h.grid.height)
    throw IoError(where + ": expected " + std::to_string(h.grid.height) + " rows, found " +
                  std::to_string(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r].size()) != h.grid.width)
      throw IoError(where + ": row " + std::to_string(r) + " has " +
                    std::to_string(rows[r].size()) + " values, expected " +
                    std::to_string(h.grid.width));
  }
  return {h, std::move(rows)};
}

void write_header(std::ostream& out, const Grid& grid, std::optional<double> nodata) {
  out << "ncols " << grid.width << '\n'
      << "nrows " << grid.height << '\n'
      << "xllcorner " << format_double(grid.origin_x) << '\n'
      << "yllcorner " << format_double(grid.origin_y - grid.height * grid.pixel_size) << '\n'
      << "cellsize " << format_double(grid.pixel_size) << '\n';
  if (nodata) out << "NODATA_value " << format_double(*nodata) << '\n';
}

}  // namespace

Band load_dem(const std::filesystem::path& path) {
  auto parsed = parse_file(path);
  const Grid grid = parsed.header.grid;
  Band band(grid);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const double v = parse_double(parsed.rows[r][c], path.string());
      if (parsed.header.nodata && v == *parsed.header.nodata) {
        band.set_nodata(c, r);
      } else {
        band.at(c, r) = v;
      }
    }
  }
  return band;
}

void write_ascii_grid(const std::filesystem::path& path, const Band& band, double nodata_value) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_header(out, band.grid(), nodata_value);
  const std::string nodata_text = format_double(nodata_value);
  for (int r = 0; r < band.height(); ++r) {
    for (int c = 0; c < band.width(); ++c) {
      if (c) out << ' ';
      out << (band.is_nodata(c, r) ? nodata_text : format_double(band.at(c, r)));
    }
    out << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

IntRaster read_int_ascii_grid(const std::filesystem::path& path) {
  auto parsed = parse_file(path);
  IntRaster raster{parsed.header.grid, {}};
  raster.values.reserve(raster.grid.cell_count());
  for (const auto& row : parsed.rows) {
    for (const auto& tok : row) {
      std::int32_t v = 0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw IoError(path.string() + ": expected integer, got '" + tok + "'");
      raster.values.push_back(v);
    }
  }
  return raster;
}

void write_int_ascii_grid(const std::filesystem::path& path, const IntRaster& raster) {
  raster.grid.validate();
  if (raster.values.size() != raster.grid.cell_count())
    throw PreconditionError("integer raster does not match its grid");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_header(out, raster.grid, -1.0);
  for (int r = 0; r < raster.grid.height; ++r) {
    for (int c = 0; c < raster.grid.width; ++c) {
      if (c) out << ' ';
      out << raster.values[static_cast<std::size_t>(r) * raster.grid.width + c];
    }
    out << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace crownpipe::raster
