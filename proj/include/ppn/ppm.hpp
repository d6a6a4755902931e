#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppn {

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

namespace detail {

// Skips whitespace and '#' comments between PPM header tokens.
inline int next_header_int(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) {
    throw std::runtime_error("malformed PPM header in " + path);
  }
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  if (c != EOF) in.unget();
  return value;
}

}  // namespace detail

// Binary P6 only, maxval 255.
inline PpmImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open PPM file " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') {
    throw std::runtime_error("not a P6 PPM file: " + path);
  }
  PpmImage img;
  img.width = detail::next_header_int(in, path);
  img.height = detail::next_header_int(in, path);
  const int maxval = detail::next_header_int(in, path);
  if (img.width < 1 || img.height < 1) {
    throw std::runtime_error("PPM has empty dimensions: " + path);
  }
  if (maxval != 255) {
    throw std::runtime_error("PPM maxval must be 255 in " + path);
  }
  in.get();  // single whitespace after maxval
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw std::runtime_error("PPM pixel data truncated in " + path);
  }
  return img;
}

inline void write_ppm(const std::string& path, const PpmImage& img) {
  if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw std::invalid_argument("write_ppm: pixel buffer size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write PPM file " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace ppn
