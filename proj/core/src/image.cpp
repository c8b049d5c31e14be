#include "vslam/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vslam/errors.hpp"

namespace vslam {

double GrayImage::sample(double x, double y) const {
  const double cx = std::clamp(x, 0.0, static_cast<double>(width - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const int x0 = static_cast<int>(cx);
  const int y0 = static_cast<int>(cy);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = cx - x0;
  const double fy = cy - y0;
  return (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x1, y0) +
         (1 - fx) * fy * at(x0, y1) + fx * fy * at(x1, y1);
}

namespace {

int next_pgm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments between header tokens.
  while (true) {
    int c = in.peek();
    if (c == EOF) throw MalformedFile(path + ": truncated PGM header");
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value)) throw MalformedFile(path + ": bad PGM header token");
  return value;
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '2' && kind != '5')) {
    throw MalformedFile(path + ": not a P2/P5 PGM file");
  }
  const int width = next_pgm_token(in, path);
  const int height = next_pgm_token(in, path);
  const int maxval = next_pgm_token(in, path);
  if (width <= 0 || height <= 0) {
    throw MalformedFile(path + ": non-positive PGM dimensions");
  }
  if (maxval <= 0 || maxval > 255) {
    throw MalformedFile(path + ": only 8-bit PGM supported (maxval " +
                        std::to_string(maxval) + ")");
  }
  GrayImage img(width, height);
  const double scale = 1.0 / maxval;
  if (kind == '5') {
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> row(width);
    for (int y = 0; y < height; ++y) {
      in.read(reinterpret_cast<char*>(row.data()), width);
      if (!in) throw MalformedFile(path + ": truncated PGM pixel data");
      for (int x = 0; x < width; ++x) img.at(x, y) = row[x] * scale;
    }
  } else {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        int v;
        if (!(in >> v)) throw MalformedFile(path + ": truncated PGM pixel data");
        img.at(x, y) = std::clamp(v, 0, maxval) * scale;
      }
    }
  }
  return img;
}

GrayImage read_png_file(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw MalformedFile(path + ": " + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw MalformedFile(path + ": " + message);
  }
  GrayImage img(static_cast<int>(png.width), static_cast<int>(png.height));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      img.at(x, y) = buffer[static_cast<std::size_t>(y) * img.width + x] / 255.0;
    }
  }
  return img;
}

unsigned char quantize(double v) {
  return static_cast<unsigned char>(
      std::clamp(std::lround(v * 255.0), 0l, 255l));
}

}  // namespace

GrayImage read_gray_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open image: " + path);
  unsigned char magic[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(magic), 2);
  probe.close();
  if (magic[0] == 'P' && (magic[1] == '2' || magic[1] == '5')) {
    return read_pgm(path);
  }
  if (magic[0] == 0x89 && magic[1] == 'P') {
    return read_png_file(path);
  }
  throw MalformedFile(path + ": unsupported image format (PGM/PNG only)");
}

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) row[x] = quantize(img.at(x, y));
    out.write(reinterpret_cast<const char*>(row.data()), img.width);
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_png(const GrayImage& img, const std::string& path) {
  std::vector<unsigned char> buffer(static_cast<std::size_t>(img.width) *
                                    img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      buffer[static_cast<std::size_t>(y) * img.width + x] =
          quantize(img.at(x, y));
    }
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = img.width;
  png.height = img.height;
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0,
                               nullptr)) {
    throw IoError(path + ": " + png.message);
  }
}

}  // namespace vslam
