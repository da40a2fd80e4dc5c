#include "flamegs/image.hpp"

#include "flamegs/common.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace flamegs {

Image clamp01(const Image& img) {
  Image out = img;
  for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void write_pgm16(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
  std::string row(static_cast<std::size_t>(img.width) * 2, '\0');
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = std::clamp(img(x, y), 0.0, 1.0);
      const auto s = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      row[2 * x] = static_cast<char>(s >> 8);
      row[2 * x + 1] = static_cast<char>(s & 0xff);
    }
    os.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.peek()) != EOF) {
    if (c == '#') {
      std::string dummy;
      std::getline(is, dummy);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  while ((c = is.peek()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(is.get()));
  return tok;
}

}  // namespace

Image read_pgm16(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  if (next_token(is) != "P5") throw FormatError(path.string() + ": not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(is));
    h = std::stoi(next_token(is));
    maxval = std::stoi(next_token(is));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw FormatError(path.string() + ": unsupported PGM geometry");
  }
  is.get();  // single whitespace after maxval
  Image img(w, h);
  const int bytes = maxval > 255 ? 2 : 1;
  std::string row(static_cast<std::size_t>(w) * bytes, '\0');
  for (int y = 0; y < h; ++y) {
    is.read(row.data(), static_cast<std::streamsize>(row.size()));
    if (!is) throw FormatError(path.string() + ": truncated PGM payload");
    for (int x = 0; x < w; ++x) {
      unsigned s = bytes == 2 ? (static_cast<unsigned char>(row[2 * x]) << 8) |
                                    static_cast<unsigned char>(row[2 * x + 1])
                              : static_cast<unsigned char>(row[x]);
      img(x, y) = static_cast<double>(s) / maxval;
    }
  }
  return img;
}

}  // namespace flamegs
