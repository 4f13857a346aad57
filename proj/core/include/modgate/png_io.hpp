#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "modgate/raster.hpp"

namespace modgate {

std::vector<std::uint8_t> encode_png(const Raster& image);

/// Decodes PNG bytes into RGBA. Empty or truncated input -> DecodeError;
/// bytes that are not a PNG at all -> FormatError.
Raster decode_png(std::span<const std::uint8_t> bytes);

void save_png(const Raster& image, const std::filesystem::path& path);
Raster load_png(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace modgate
