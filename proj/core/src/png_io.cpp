#include "modgate/png_io.hpp"

#include <png.h>

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "modgate/error.hpp"

namespace modgate {
namespace {

constexpr std::array<std::uint8_t, 8> kPngMagic{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

}  // namespace

std::vector<std::uint8_t> encode_png(const Raster& image) {
  if (image.empty()) {
    throw Error(ErrorKind::InvalidSpec, "cannot encode an empty raster");
  }
  PngImage png;
  png.image.width = static_cast<png_uint_32>(image.width());
  png.image.height = static_cast<png_uint_32>(image.height());
  png.image.format = PNG_FORMAT_RGBA;
  png_alloc_size_t size = 0;
  const auto* pixels = image.bytes().data();
  if (!png_image_write_to_memory(&png.image, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw Error(ErrorKind::FormatError, std::string("png sizing failed: ") + png.image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png.image, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw Error(ErrorKind::FormatError, std::string("png encode failed: ") + png.image.message);
  }
  out.resize(size);
  return out;
}

Raster decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) {
    throw Error(ErrorKind::DecodeError, "empty image file");
  }
  if (bytes.size() < kPngMagic.size() ||
      std::memcmp(bytes.data(), kPngMagic.data(), kPngMagic.size()) != 0) {
    if (bytes.size() < kPngMagic.size() &&
        std::memcmp(bytes.data(), kPngMagic.data(), bytes.size()) == 0) {
      throw Error(ErrorKind::DecodeError, "truncated png signature");
    }
    throw Error(ErrorKind::FormatError, "unsupported image format (expected PNG)");
  }
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size())) {
    throw Error(ErrorKind::DecodeError, std::string("png header: ") + png.image.message);
  }
  png.image.format = PNG_FORMAT_RGBA;
  const auto width = static_cast<int>(png.image.width);
  const auto height = static_cast<int>(png.image.height);
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, pixels.data(), 0, nullptr)) {
    throw Error(ErrorKind::DecodeError, std::string("png data: ") + png.image.message);
  }
  return Raster::from_bytes(width, height, std::move(pixels));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorKind::IoError, "cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(ErrorKind::IoError, "short write to " + path.string());
  }
}

void save_png(const Raster& image, const std::filesystem::path& path) {
  write_file_bytes(path, encode_png(image));
}

Raster load_png(const std::filesystem::path& path) {
  return decode_png(read_file_bytes(path));
}

}  // namespace modgate
