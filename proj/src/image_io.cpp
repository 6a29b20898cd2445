#include <png.h>

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <memory>

#include "ctv/errors.hpp"
#include "ctv/perturb.hpp"

namespace ctv {
namespace {

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

// Next whitespace-delimited PNM header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int parse_dim(const std::string& tok, const std::filesystem::path& path) {
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (tok.empty() || *end != '\0' || v < 0 || v > (1 << 24)) {
    throw IoError(path.string() + ": bad PPM header field '" + tok + "'");
  }
  return static_cast<int>(v);
}

struct PngImageGuard {
  png_image* image;
  ~PngImageGuard() { png_image_free(image); }
};

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (next_token(in) != "P6") throw IoError(path.string() + ": not a binary PPM (P6)");
  const int w = parse_dim(next_token(in), path);
  const int h = parse_dim(next_token(in), path);
  const int maxval = parse_dim(next_token(in), path);
  if (maxval != 255) throw IoError(path.string() + ": only 8-bit PPM supported");
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw IoError(path.string() + ": truncated pixel data");
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  PngImageGuard guard{&png};
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError(path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + png.message);
  }
  return img;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  PngImageGuard guard{&png};
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, img.pixels.data(), 0,
                                 nullptr)) {
    throw IoError(std::string("png encode: ") + png.message);
  }
  std::vector<std::uint8_t> buf(size);
  if (!png_image_write_to_memory(&png, buf.data(), &size, 0, img.pixels.data(),
                                 0, nullptr)) {
    throw IoError(std::string("png encode: ") + png.message);
  }
  buf.resize(size);
  return buf;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const auto buf = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Image read_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  throw IoError(path.string() + ": unsupported image format (use .png or .ppm)");
}

void write_image(const std::filesystem::path& path, const Image& img) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return write_png(path, img);
  if (ext == ".ppm") return write_ppm(path, img);
  throw IoError(path.string() + ": unsupported image format (use .png or .ppm)");
}

}  // namespace ctv
