#include "mce/image_io.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "mce/errors.hpp"

namespace mce {

namespace {

unsigned char to_byte(real v) {
  const real c = std::min(real(1), std::max(real(0), v));
  return static_cast<unsigned char>(std::lround(c * real(255)));
}

int read_pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw IoError("malformed PNM header");
  return value;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw ContractError("write_ppm: image [3xHxW] expected, got " + shape_str(image.shape()));
  }
  const int h = image.extent(1), w = image.extent(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[static_cast<size_t>(x) * 3 + c] =
            to_byte(image.data()[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * w + x]);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write to " + path);
}

void write_pgm(const std::string& path, const Tensor& gray) {
  if (gray.rank() != 2) throw ContractError("write_pgm: rank-2 image expected");
  const int h = gray.extent(0), w = gray.extent(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      row[static_cast<size_t>(x)] = to_byte(gray.data()[static_cast<size_t>(y) * w + x]);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write to " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError(path + ": not a binary PPM (P6) file");
  const int w = read_pnm_token(in);
  const int h = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
  in.get();  // the single whitespace after the header
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError(path + ": truncated pixel data");
  }
  Tensor img = Tensor::zeros({3, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.mutable_data()[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * w + x] =
            static_cast<real>(raw[(static_cast<size_t>(y) * w + x) * 3 + c]) / real(255);
      }
    }
  }
  return img;
}

Tensor read_pgm(const std::string& path, bool threshold_binary) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError(path + ": not a binary PGM (P5) file");
  const int w = read_pnm_token(in);
  const int h = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
  in.get();
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError(path + ": truncated pixel data");
  }
  Tensor img = Tensor::zeros({h, w});
  for (size_t i = 0; i < raw.size(); ++i) {
    real v = static_cast<real>(raw[i]) / real(255);
    if (threshold_binary) v = (v >= real(0.5)) ? real(1) : real(0);
    img.mutable_data()[i] = v;
  }
  return img;
}

}  // namespace mce
