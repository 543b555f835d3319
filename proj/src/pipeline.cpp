#include "selfens/pipeline.hpp"

#include "selfens/errors.hpp"

#include <algorithm>
#include <cmath>

namespace selfens {

namespace {

constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

std::string describe_size(int w, int h) { return std::to_string(w) + "x" + std::to_string(h); }

void require_source(const Image &img, const AugmentSpec &spec, const char *op) {
  if (img.width != spec.source_size.width || img.height != spec.source_size.height)
    throw ShapeError(std::string(op) + ": expected a " +
                     describe_size(spec.source_size.width, spec.source_size.height) +
                     " source image, got " + describe_size(img.width, img.height));
}

} // namespace

void AugmentSpec::validate() const {
  if (brightness_delta < 0.0)
    throw UsageError("brightness_delta must be non-negative");
  if (saturation_min < 0.0 || saturation_max < saturation_min)
    throw UsageError("saturation range must satisfy 0 <= saturation_min <= saturation_max");
  if (hflip_probability < 0.0 || hflip_probability > 1.0)
    throw UsageError("hflip_probability must lie in [0, 1]");
  if (crop_size.width <= 0 || crop_size.height <= 0 || source_size.width <= 0 ||
      source_size.height <= 0)
    throw UsageError("image sizes must be positive");
  if (crop_size.width > source_size.width || crop_size.height > source_size.height)
    throw UsageError("crop size " + describe_size(crop_size.width, crop_size.height) +
                     " exceeds source size " +
                     describe_size(source_size.width, source_size.height));
}

AugmentSpec AugmentSpec::degenerate(Size2 source, Size2 crop) {
  AugmentSpec spec;
  spec.brightness_delta = 0.0;
  spec.saturation_min = spec.saturation_max = 1.0;
  spec.hflip_probability = 0.0;
  spec.random_crop = false;
  spec.source_size = source;
  spec.crop_size = crop;
  return spec;
}

AugmentSpec AugmentSpec::for_crop(int crop_side) {
  if (crop_side <= 0 || crop_side % 8 != 0)
    throw UsageError("crop side must be a positive multiple of 8, got " +
                     std::to_string(crop_side));
  AugmentSpec spec;
  const int source = crop_side / 8 * 9;
  spec.source_size = {source, source};
  spec.crop_size = {crop_side, crop_side};
  return spec;
}

Image resize(const Image &img, int width, int height) {
  if (width <= 0 || height <= 0)
    throw UsageError("resize target must be positive, got " + describe_size(width, height));
  if (width == img.width && height == img.height)
    return img;
  Image out(width, height, img.channels);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = (1.0 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c);
        const double bottom = (1.0 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c);
        out.at(x, y, c) = clamp01((1.0 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

Image color_jitter(const Image &img, const JitterParams &params) {
  Image out = img;
  const auto n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    float *px = out.pixels.data() + i * img.channels;
    for (int c = 0; c < img.channels; ++c)
      px[c] = clamp01(px[c] + params.brightness);
    if (img.channels == 3) {
      const double luma = kLumaR * px[0] + kLumaG * px[1] + kLumaB * px[2];
      for (int c = 0; c < 3; ++c)
        px[c] = clamp01(luma + params.saturation * (px[c] - luma));
    }
  }
  return out;
}

Image color_jitter(const Image &img, const AugmentSpec &spec, Rng &rng) {
  JitterParams p;
  p.brightness = rng.uniform(-spec.brightness_delta, spec.brightness_delta);
  p.saturation = rng.uniform(spec.saturation_min, spec.saturation_max);
  return color_jitter(img, p);
}

Image hflip(const Image &img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  return out;
}

Image crop(const Image &img, int x0, int y0, int width, int height) {
  if (width > img.width || height > img.height)
    throw ShapeError("crop " + describe_size(width, height) + " does not fit in a " +
                     describe_size(img.width, img.height) + " image");
  if (x0 < 0 || y0 < 0 || x0 + width > img.width || y0 + height > img.height)
    throw ShapeError("crop window at (" + std::to_string(x0) + ", " + std::to_string(y0) +
                     ") leaves the image");
  Image out(width, height, img.channels);
  for (int y = 0; y < height; ++y)
    std::copy_n(img.pixels.begin() +
                    ((static_cast<std::ptrdiff_t>(y0 + y) * img.width) + x0) * img.channels,
                static_cast<std::ptrdiff_t>(width) * img.channels,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * width * img.channels);
  return out;
}

Image random_crop(const Image &img, Size2 crop_size, Rng &rng) {
  if (crop_size.width > img.width || crop_size.height > img.height)
    throw ShapeError("crop " + describe_size(crop_size.width, crop_size.height) +
                     " does not fit in a " + describe_size(img.width, img.height) + " image");
  const int x0 = static_cast<int>(rng.uniform_int(0, img.width - crop_size.width));
  const int y0 = static_cast<int>(rng.uniform_int(0, img.height - crop_size.height));
  return crop(img, x0, y0, crop_size.width, crop_size.height);
}

Image center_crop(const Image &img, Size2 crop_size) {
  if (crop_size.width > img.width || crop_size.height > img.height)
    throw ShapeError("crop " + describe_size(crop_size.width, crop_size.height) +
                     " does not fit in a " + describe_size(img.width, img.height) + " image");
  return crop(img, (img.width - crop_size.width) / 2, (img.height - crop_size.height) / 2,
              crop_size.width, crop_size.height);
}

Image to_grayscale(const Image &img) {
  if (img.channels == 1)
    return img;
  Image out(img.width, img.height, 1);
  const auto n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const float *px = img.pixels.data() + i * 3;
    out.pixels[i] = clamp01(kLumaR * px[0] + kLumaG * px[1] + kLumaB * px[2]);
  }
  return out;
}

Tensor to_tensor(const Image &img) {
  if (img.channels != 1)
    throw ShapeError("to_tensor expects a grayscale image, got " +
                     std::to_string(img.channels) + " channels");
  return Tensor(Shape{1, img.height, img.width}, img.pixels);
}

Image augment_view(const Image &source, const AugmentSpec &spec, Rng &rng) {
  // The draw order is fixed so a stream always maps to the same view.
  Image img = color_jitter(source, spec, rng);
  const bool flip = rng.bernoulli(spec.hflip_probability);
  if (flip)
    img = hflip(img);
  img = spec.random_crop ? random_crop(img, spec.crop_size, rng) : center_crop(img, spec.crop_size);
  return to_grayscale(img);
}

std::pair<Tensor, Tensor> perturb_pair(const Image &source, const AugmentSpec &spec, Rng first,
                                       Rng second) {
  require_source(source, spec, "perturb_pair");
  return {to_tensor(augment_view(source, spec, first)),
          to_tensor(augment_view(source, spec, second))};
}

std::pair<Tensor, Tensor> perturb_pair(const Image &source, const AugmentSpec &spec,
                                       const Rng &rng) {
  return perturb_pair(source, spec, rng.split(0), rng.split(1));
}

Tensor eval_path(const Image &source, const AugmentSpec &spec) {
  require_source(source, spec, "eval_path");
  return to_tensor(to_grayscale(center_crop(source, spec.crop_size)));
}

Image load_source(const std::filesystem::path &path, const AugmentSpec &spec) {
  return resize(read_image(path), spec.source_size.width, spec.source_size.height);
}

} // namespace selfens
