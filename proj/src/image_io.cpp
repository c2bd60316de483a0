#include "iidsu/image_io.hpp"

#include <fstream>

#include "iidsu/tensor.hpp"

namespace iidsu {

namespace {

/// Reads the next header integer, skipping whitespace and '#' comments.
int read_header_int(std::istream& is, const std::string& path) {
  for (;;) {
    const int c = is.peek();
    if (c == EOF) throw IoError("ppm '" + path + "': truncated header");
    if (c == '#') {
      std::string comment;
      std::getline(is, comment);
      continue;
    }
    if (std::isspace(c)) {
      is.get();
      continue;
    }
    break;
  }
  int v = 0;
  if (!(is >> v)) throw IoError("ppm '" + path + "': malformed header number");
  return v;
}

}  // namespace

void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  if (width < 1 || height < 1)
    throw ContractError("write_ppm: dimensions must be positive");
  if (rgb.size() != static_cast<size_t>(width) * height * 3)
    throw ContractError("write_ppm: buffer holds " +
                        std::to_string(rgb.size()) + " bytes, expected " +
                        std::to_string(static_cast<size_t>(width) * height * 3));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("ppm '" + path + "': cannot open for writing");
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()),
           static_cast<std::streamsize>(rgb.size()));
  if (!os) throw IoError("ppm '" + path + "': write failed");
}

PpmImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("ppm '" + path + "': cannot open");
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (!is || m0 != 'P' || m1 != '6')
    throw IoError("ppm '" + path + "': not a P6 file");
  PpmImage img;
  img.width = read_header_int(is, path);
  img.height = read_header_int(is, path);
  const int maxval = read_header_int(is, path);
  if (img.width < 1 || img.height < 1)
    throw IoError("ppm '" + path + "': invalid dimensions");
  if (maxval != 255)
    throw IoError("ppm '" + path + "': only maxval 255 is supported");
  is.get();  // the single whitespace byte after the header
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(img.rgb.data()),
               static_cast<std::streamsize>(img.rgb.size())))
    throw IoError("ppm '" + path + "': truncated pixel data");
  return img;
}

}  // namespace iidsu
