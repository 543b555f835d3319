#pragma once

#include "selfens/rng.hpp"
#include "selfens/tensor.hpp"

#include <filesystem>
#include <utility>
#include <vector>

namespace selfens {

/// Interleaved row-major image with values in [0, 1]; 1 or 3 channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> pixels;

  Image() = default;
  Image(int width, int height, int channels, float fill = 0.0f);

  float &at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image &, const Image &) = default;
};

/// Binary PGM (P5) / PPM (P6) with maxval 255, or 8-bit PNG. Values are
/// mapped to [0, 1] by /255; PNG alpha is dropped.
Image read_image(const std::filesystem::path &path);
/// PGM for 1-channel images, PPM for 3-channel ones.
void write_pnm(const Image &img, const std::filesystem::path &path);
void write_png(const Image &img, const std::filesystem::path &path);

struct Size2 {
  int width = 0;
  int height = 0;
  friend bool operator==(const Size2 &, const Size2 &) = default;
};

/// Stochastic perturbation policy for a training view.
struct AugmentSpec {
  /// Brightness offset drawn uniformly from [-brightness_delta, +brightness_delta].
  double brightness_delta = 0.2;
  /// Saturation factor drawn uniformly from [saturation_min, saturation_max];
  /// 1 keeps colors, 0 gives grayscale.
  double saturation_min = 0.5;
  double saturation_max = 1.5;
  double hflip_probability = 0.5;
  Size2 source_size{144, 144};
  Size2 crop_size{128, 128};
  /// When false, training views use the center crop.
  bool random_crop = true;

  void validate() const;

  /// Every random component disabled: training views equal the eval path.
  static AugmentSpec degenerate(Size2 source = {144, 144}, Size2 crop = {128, 128});
  /// Geometry scaled from 144 -> 128 to an arbitrary crop side (multiple of 8).
  static AugmentSpec for_crop(int crop_side);
};

struct JitterParams {
  double brightness = 0.0;
  double saturation = 1.0;
};

/// Bilinear resize with half-pixel centers; output clamped to [0, 1].
Image resize(const Image &img, int width, int height);

/// Blends each pixel toward its luma by `saturation`, then adds
/// `brightness`; clamped. Saturation is a no-op on 1-channel images.
Image color_jitter(const Image &img, const JitterParams &params);
Image color_jitter(const Image &img, const AugmentSpec &spec, Rng &rng);

Image hflip(const Image &img);
Image crop(const Image &img, int x0, int y0, int width, int height);
/// Offsets uniform over {0 .. source - crop} on each axis.
Image random_crop(const Image &img, Size2 crop_size, Rng &rng);
Image center_crop(const Image &img, Size2 crop_size);
/// BT.601 luma; 1-channel input passes through.
Image to_grayscale(const Image &img);

/// [1, H, W] tensor from a 1-channel image.
Tensor to_tensor(const Image &img);

/// One training view: jitter -> flip with probability p -> crop -> grayscale.
Image augment_view(const Image &source, const AugmentSpec &spec, Rng &rng);

/// Two independent views of one source image, each drawn from its own stream.
std::pair<Tensor, Tensor> perturb_pair(const Image &source, const AugmentSpec &spec,
                                       Rng first, Rng second);
/// Convenience overload: streams 0 and 1 split from `rng`.
std::pair<Tensor, Tensor> perturb_pair(const Image &source, const AugmentSpec &spec,
                                       const Rng &rng);

/// Test-time path: center crop -> grayscale.
Tensor eval_path(const Image &source, const AugmentSpec &spec);

/// Reads an image and resizes it to the AugmentSpec source size.
Image load_source(const std::filesystem::path &path, const AugmentSpec &spec);

} // namespace selfens
