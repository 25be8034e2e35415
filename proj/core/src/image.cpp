#include "crownpipe/image.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "crownpipe/error.hpp"

namespace crownpipe {

RgbImage::RgbImage(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw PreconditionError("negative image size");
  pixels_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = fill[0];
    pixels_[i + 1] = fill[1];
    pixels_[i + 2] = fill[2];
  }
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 0 || height < 0) throw PreconditionError("negative image size");
  if (pixels_.size() != static_cast<std::size_t>(width) * height * 3)
    throw PreconditionError("pixel buffer does not match image size");
}

namespace {

struct PngImage {
  png_image img;
  PngImage() {
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

RgbImage finish_read(PngImage& png, const std::string& what) {
  if (png.img.format != PNG_FORMAT_RGB) {
    throw IoError(what + ": expected 8-bit RGB PNG (3 channels), got format flags " +
                  std::to_string(png.img.format));
  }
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.img));
  if (!png_image_finish_read(&png.img, nullptr, buffer.data(), 0, nullptr))
    throw IoError(what + ": " + png.img.message);
  return RgbImage(static_cast<int>(png.img.width), static_cast<int>(png.img.height),
                  std::move(buffer));
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, data.data(), data.size()))
    throw IoError(path.string() + ": " + png.img.message);
  return finish_read(png, path.string());
}

RgbImage decode_png_rgb(std::span<const std::uint8_t> data) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, data.data(), data.size()))
    throw IoError(std::string("png decode: ") + png.img.message);
  return finish_read(png, "png decode");
}

std::vector<std::uint8_t> encode_png_rgb(const RgbImage& image) {
  if (image.empty()) throw PreconditionError("cannot encode an empty image");
  PngImage png;
  png.img.width = static_cast<png_uint_32>(image.width());
  png.img.height = static_cast<png_uint_32>(image.height());
  png.img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.img, nullptr, &size, 0, image.bytes().data(), 0,
                                 nullptr))
    throw IoError(std::string("png encode: ") + png.img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png.img, out.data(), &size, 0, image.bytes().data(), 0,
                                 nullptr))
    throw IoError(std::string("png encode: ") + png.img.message);
  out.resize(size);
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  const auto bytes = encode_png_rgb(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace crownpipe
