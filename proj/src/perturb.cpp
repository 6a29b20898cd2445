#include "ctv/perturb.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "ctv/errors.hpp"

namespace ctv {
namespace {

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

Image::Image(int w, int h, std::uint8_t fill)
    : width(w),
      height(h),
      pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3,
             fill) {}

PerturbSpec PerturbSpec::flip() { return {PerturbKind::kFlipH, 2.0, 1.0, 1.0}; }

PerturbSpec PerturbSpec::sharpen(double sigma, double amount) {
  if (!(sigma > 0.0)) throw ValidationError("sharpen sigma must be > 0");
  if (!(amount >= 0.0)) throw ValidationError("sharpen amount must be >= 0");
  return {PerturbKind::kSharpen, sigma, amount, 1.0};
}

PerturbSpec PerturbSpec::brightness(double factor) {
  if (!(factor > 0.0)) throw ValidationError("brightness factor must be > 0");
  return {PerturbKind::kBrightness, 2.0, 1.0, factor};
}

Condition condition_by_name(std::string_view name) {
  if (name == "N") return {"N", true, PerturbSpec::flip()};
  if (name == "F") return {"F", false, PerturbSpec::flip()};
  if (name == "SUp") return {"SUp", false, PerturbSpec::sharpen(2.0, 1.0)};
  if (name == "BUp") return {"BUp", false, PerturbSpec::brightness(1.3)};
  if (name == "BDn") return {"BDn", false, PerturbSpec::brightness(0.7)};
  throw ValidationError("unknown condition '" + std::string(name) +
                        "' (expected N, F, SUp, BUp or BDn)");
}

std::vector<std::string> standard_condition_names() {
  return {"N", "F", "SUp", "BUp", "BDn"};
}

BBox flip_box_h(const BBox& box, int width) {
  const double w = static_cast<double>(width);
  return {w - box.x2, box.y1, w - box.x1, box.y2};
}

std::pair<Image, std::vector<GroundTruthBox>> flip_h(
    const Image& img, std::span<const GroundTruthBox> gts) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    }
  }
  std::vector<GroundTruthBox> boxes;
  boxes.reserve(gts.size());
  for (const auto& g : gts) boxes.push_back({flip_box_h(g.box, img.width), g.class_id});
  return {std::move(out), std::move(boxes)};
}

std::vector<double> gaussian_blur(const Image& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  const auto kernel = gaussian_kernel(sigma, radius);
  const int w = img.width;
  const int h = img.height;
  std::vector<double> tmp(img.pixels.size());
  std::vector<double> out(img.pixels.size());
  auto idx = [w](int x, int y, int c) {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
            static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, w - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] * img.at(xx, y, c);
        }
        tmp[idx(x, y, c)] = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, h - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[idx(x, yy, c)];
        }
        out[idx(x, y, c)] = acc;
      }
    }
  }
  return out;
}

Image sharpen(const Image& img, double sigma, double amount) {
  if (!(sigma > 0.0)) throw ValidationError("sharpen sigma must be > 0");
  if (!(amount >= 0.0)) throw ValidationError("sharpen amount must be >= 0");
  if (amount == 0.0) return img;
  const auto blurred = gaussian_blur(img, sigma);
  Image out = img;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = img.pixels[i];
    out.pixels[i] = to_u8(v + amount * (v - blurred[i]));
  }
  return out;
}

double srgb_to_linear(double encoded) {
  if (encoded <= 0.04045) return encoded / 12.92;
  return std::pow((encoded + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double linear) {
  if (linear <= 0.0031308) return 12.92 * linear;
  return 1.055 * std::pow(linear, 1.0 / 2.4) - 0.055;
}

Image brightness(const Image& img, double factor) {
  if (!(factor > 0.0)) throw ValidationError("brightness factor must be > 0");
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) {
    const double lin = srgb_to_linear(v / 255.0) * factor;
    lut[static_cast<std::size_t>(v)] =
        to_u8(linear_to_srgb(std::min(lin, 1.0)) * 255.0);
  }
  Image out = img;
  for (auto& p : out.pixels) p = lut[p];
  return out;
}

std::pair<Image, std::vector<GroundTruthBox>> apply(
    const PerturbSpec& spec, const Image& img,
    std::span<const GroundTruthBox> gts) {
  switch (spec.kind) {
    case PerturbKind::kFlipH:
      return flip_h(img, gts);
    case PerturbKind::kSharpen:
      return {sharpen(img, spec.sigma, spec.amount), {gts.begin(), gts.end()}};
    case PerturbKind::kBrightness:
      return {brightness(img, spec.factor), {gts.begin(), gts.end()}};
  }
  throw ValidationError("unknown perturbation kind");
}

}  // namespace ctv
