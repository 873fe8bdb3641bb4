#pragma once

// Binary netpbm I/O: P5 (gray) and P6 (RGB), 8-bit or 16-bit big-endian.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace ahmf {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Interleaved samples, row-major.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  int maxval = 255;
  std::vector<std::uint16_t> samples;

  std::uint16_t at(int y, int x, int c = 0) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {

inline int read_header_int(const std::vector<unsigned char>& buf,
                           std::size_t& pos, const std::string& path) {
  for (;;) {
    while (pos < buf.size() && std::isspace(buf[pos])) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= buf.size() || !std::isdigit(buf[pos])) {
    throw FormatError(path + ": malformed netpbm header");
  }
  long value = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    value = value * 10 + (buf[pos++] - '0');
    if (value > 1'000'000) throw FormatError(path + ": header value too large");
  }
  return static_cast<int>(value);
}

}  // namespace detail

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6')) {
    throw FormatError(path + ": not a binary PGM (P5) or PPM (P6) file");
  }
  Image img;
  img.channels = buf[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  img.width = detail::read_header_int(buf, pos, path);
  img.height = detail::read_header_int(buf, pos, path);
  img.maxval = detail::read_header_int(buf, pos, path);
  if (img.width < 1 || img.height < 1) {
    throw FormatError(path + ": zero image dimension");
  }
  if (img.maxval < 1 || img.maxval > 65535) {
    throw FormatError(path + ": maxval " + std::to_string(img.maxval) +
                      " outside 1..65535");
  }
  if (pos >= buf.size() || !std::isspace(buf[pos])) {
    throw FormatError(path + ": missing whitespace after header");
  }
  ++pos;
  const std::size_t count =
      static_cast<std::size_t>(img.width) * img.height * img.channels;
  const std::size_t bytes = img.maxval > 255 ? 2 : 1;
  if (buf.size() - pos < count * bytes) {
    throw FormatError(path + ": truncated pixel data (" +
                      std::to_string(buf.size() - pos) + " of " +
                      std::to_string(count * bytes) + " bytes)");
  }
  img.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint16_t v = buf[pos + i * bytes];
    if (bytes == 2) v = static_cast<std::uint16_t>((v << 8) | buf[pos + i * 2 + 1]);
    if (v > img.maxval) {
      throw FormatError(path + ": sample exceeds maxval");
    }
    img.samples[i] = v;
  }
  return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw FormatError(path + ": only 1 or 3 channels can be written");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << (img.channels == 1 ? "P5" : "P6") << '\n'
      << img.width << ' ' << img.height << '\n'
      << img.maxval << '\n';
  std::vector<unsigned char> bytes;
  const bool wide = img.maxval > 255;
  bytes.reserve(img.samples.size() * (wide ? 2 : 1));
  for (std::uint16_t v : img.samples) {
    if (wide) bytes.push_back(static_cast<unsigned char>(v >> 8));
    bytes.push_back(static_cast<unsigned char>(v & 0xFF));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace ahmf
