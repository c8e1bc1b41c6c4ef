#pragma once

#include <filesystem>
#include <string>

#include "mrigen/core.hpp"

namespace mrigen {

// 8-bit grayscale only. PNG via libpng; PGM is binary P5 maxval 255.

void write_png(const std::filesystem::path& path, const U8Image& img);
U8Image read_png(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const U8Image& img);
U8Image read_pgm(const std::filesystem::path& path);

/// Dispatch on extension (.png / .pgm).
void save_image(const std::filesystem::path& path, const U8Image& img);

/// Sniffs the magic bytes, so either format loads regardless of extension.
U8Image load_image(const std::filesystem::path& path);

}  // namespace mrigen
