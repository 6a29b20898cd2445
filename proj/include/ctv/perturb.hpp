#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctv/geometry.hpp"

namespace ctv {

/// Row-major 8-bit sRGB image, three channels per pixel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                   static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                   static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
  }

  bool valid() const noexcept {
    return width >= 0 && height >= 0 &&
           pixels.size() == static_cast<std::size_t>(width) *
                                static_cast<std::size_t>(height) * 3;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class PerturbKind { kFlipH, kSharpen, kBrightness };

struct PerturbSpec {
  PerturbKind kind = PerturbKind::kFlipH;
  double sigma = 2.0;    // sharpen
  double amount = 1.0;   // sharpen
  double factor = 1.0;   // brightness

  static PerturbSpec flip();
  static PerturbSpec sharpen(double sigma = 2.0, double amount = 1.0);
  static PerturbSpec brightness(double factor);
};

/// Named robustness conditions: N (identity), F, SUp, BUp (x1.3), BDn (x0.7).
/// Throws ValidationError for other names.
struct Condition {
  std::string name;
  bool is_identity = false;
  PerturbSpec spec;
};
Condition condition_by_name(std::string_view name);
std::vector<std::string> standard_condition_names();

/// Mirror one box about the vertical centre line of an image `width` wide.
BBox flip_box_h(const BBox& box, int width);

std::pair<Image, std::vector<GroundTruthBox>> flip_h(
    const Image& img, std::span<const GroundTruthBox> gts);

/// Separable Gaussian blur, kernel radius ceil(3 sigma), edge-clamped,
/// unquantized. Returned buffer parallels `img.pixels`.
std::vector<double> gaussian_blur(const Image& img, double sigma);

/// Unsharp mask: img + amount * (img - blur), rounded and clamped.
Image sharpen(const Image& img, double sigma, double amount);

double srgb_to_linear(double encoded);
double linear_to_srgb(double linear);

/// Linear-light exposure scaling through the sRGB transfer function.
Image brightness(const Image& img, double factor);

/// Applies `spec`; boxes move only for flips.
std::pair<Image, std::vector<GroundTruthBox>> apply(
    const PerturbSpec& spec, const Image& img,
    std::span<const GroundTruthBox> gts);

// Image files. Format is chosen by extension (.png, .ppm).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& img);

}  // namespace ctv
