#pragma once

// Binary PPM (P6, maxval 255) reading and writing.

#include <cstdint>
#include <string>
#include <vector>

namespace iidsu {

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

/// Writes a P6 image. rgb.size() must equal width*height*3.
void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb);
/// Reads a P6 image (whitespace and '#' comments in the header are
/// handled). Malformed or truncated files throw IoError.
PpmImage read_ppm(const std::string& path);

}  // namespace iidsu
