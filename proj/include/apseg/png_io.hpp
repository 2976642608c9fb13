#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace apseg::png {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;
};

struct Image16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;  // single channel
};

void write_rgb8(const std::filesystem::path& path, const Image8& img);
void write_gray16(const std::filesystem::path& path, const Image16& img);
/// Reads an 8-bit gray or RGB PNG (RGBA is reduced to RGB).
Image8 read_rgb8(const std::filesystem::path& path);
Image16 read_gray16(const std::filesystem::path& path);

}  // namespace apseg::png
