#include "selfens/errors.hpp"
#include "selfens/pipeline.hpp"

#include <png.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <cctype>

namespace selfens {

Image::Image(int w, int h, int c, float fill) : width(w), height(h), channels(c) {
  if (w <= 0 || h <= 0 || (c != 1 && c != 3))
    throw UsageError("invalid image geometry " + std::to_string(w) + "x" + std::to_string(h) +
                     "x" + std::to_string(c));
  pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
}

namespace {

std::uint8_t to_byte(float v) {
  const float clamped = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

// Skips whitespace and '#' comments between PNM header tokens.
int read_header_int(const std::vector<unsigned char> &buf, std::size_t &pos,
                    const std::string &path) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n')
        ++pos;
    } else if (std::isspace(buf[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  int value = 0;
  bool any = false;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    value = value * 10 + (buf[pos] - '0');
    any = true;
    ++pos;
  }
  if (!any)
    throw DataError("malformed PNM header in " + path);
  return value;
}

Image read_pnm(const std::vector<unsigned char> &buf, const std::string &path) {
  const int channels = buf[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const int w = read_header_int(buf, pos, path);
  const int h = read_header_int(buf, pos, path);
  const int maxval = read_header_int(buf, pos, path);
  if (maxval != 255)
    throw DataError("unsupported PNM maxval " + std::to_string(maxval) + " in " + path +
                    " (only 255)");
  if (w <= 0 || h <= 0)
    throw DataError("invalid PNM size in " + path);
  ++pos; // single whitespace before the raster
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (buf.size() < pos + need)
    throw DataError("truncated PNM raster in " + path + ": expected " + std::to_string(need) +
                    " bytes, got " + std::to_string(buf.size() - std::min(pos, buf.size())));
  Image img(w, h, channels);
  for (std::size_t i = 0; i < need; ++i)
    img.pixels[i] = static_cast<float>(buf[pos + i]) / 255.0f;
  return img;
}

Image read_png(const std::vector<unsigned char> &buf, const std::string &path) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, buf.data(), buf.size()))
    throw DataError("cannot decode PNG " + path + ": " + desc.message);
  // Gray stays gray; anything with color is read as RGB. Alpha is dropped.
  const bool color = (desc.format & PNG_FORMAT_FLAG_COLOR) != 0;
  desc.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<unsigned char> raster(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, raster.data(), 0, nullptr)) {
    const std::string message = desc.message;
    png_image_free(&desc);
    throw DataError("cannot decode PNG " + path + ": " + message);
  }
  Image img(static_cast<int>(desc.width), static_cast<int>(desc.height), channels);
  for (std::size_t i = 0; i < raster.size(); ++i)
    img.pixels[i] = static_cast<float>(raster[i]) / 255.0f;
  return img;
}

} // namespace

Image read_image(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open image: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() >= 2 && buf[0] == 'P' && (buf[1] == '5' || buf[1] == '6'))
    return read_pnm(buf, path.string());
  if (buf.size() >= 8 && png_sig_cmp(buf.data(), 0, 8) == 0)
    return read_png(buf, path.string());
  throw DataError("unrecognized image format: " + path.string());
}

void write_pnm(const Image &img, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError("cannot open for writing: " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> raster(img.pixels.size());
  for (std::size_t i = 0; i < raster.size(); ++i)
    raster[i] = static_cast<char>(to_byte(img.pixels[i]));
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out)
    throw DataError("failed writing " + path.string());
}

void write_png(const Image &img, const std::filesystem::path &path) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> raster(img.pixels.size());
  for (std::size_t i = 0; i < raster.size(); ++i)
    raster[i] = to_byte(img.pixels[i]);
  if (!png_image_write_to_file(&desc, path.c_str(), 0, raster.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path.string() + ": " + desc.message);
}

} // namespace selfens
