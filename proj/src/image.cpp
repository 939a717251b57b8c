#include "lupi/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace lupi {

Image Image::create(std::size_t h, std::size_t w, std::size_t c, double fill) {
  if (h == 0 || w == 0 || (c != 1 && c != 3)) fail("Image: bad extents or channel count");
  Image img;
  img.height = h;
  img.width = w;
  img.channels = c;
  img.pixels.assign(h * w * c, fill);
  return img;
}

Image mix_channels(const Image& img, const MixWeights& w) {
  if (img.channels != 3) fail("mix_channels: expected a 3-channel image");
  if (w.alpha < 0.0 || w.beta < 0.0 || w.gamma < 0.0 || w.alpha > 1.0 || w.beta > 1.0 ||
      w.gamma > 1.0)
    fail("mix_channels: weights must lie in [0, 1]");
  const double denom = w.alpha + w.beta + w.gamma;
  if (denom <= 0.0) fail("mix_channels: weights sum to zero");
  Image out = Image::create(img.height, img.width, 1);
  const std::size_t n = img.height * img.width;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.pixels[3 * i];
    const double g = img.pixels[3 * i + 1];
    const double b = img.pixels[3 * i + 2];
    const double v = (w.alpha * r + w.beta * g + w.gamma * b) / denom;
    const double lo = std::min(r, std::min(g, b));
    const double hi = std::max(r, std::max(g, b));
    out.pixels[i] = std::clamp(v, lo, hi);
  }
  return out;
}

std::pair<Image, MixWeights> random_channel_mix(const Image& img, Rng& rng) {
  if (img.channels != 3) fail("random_channel_mix: expected a 3-channel image");
  MixWeights w;
  do {
    w.alpha = rng.uniform();
    w.beta = rng.uniform();
    w.gamma = rng.uniform();
  } while (w.alpha + w.beta + w.gamma <= 0.0);
  return {mix_channels(img, w), w};
}

Image to_grayscale(const Image& img) {
  // Equal weights; Eq-style normalization by the denominator makes
  // (1,1,1) and (1/3,1/3,1/3) the same mix, but (1,1,1) keeps the
  // arithmetic-mean expression exact.
  return mix_channels(img, MixWeights{1.0, 1.0, 1.0});
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) fail("resize_bilinear: target extents must be positive");
  if (out_h == img.height && out_w == img.width) return img;
  Image out = Image::create(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        const double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Image augment(const Image& img, const AugmentPolicy& policy, Rng& rng) {
  if (policy.target_h == 0 || policy.target_w == 0 || policy.pad_fraction < 0.0)
    fail("augment: malformed policy");
  Image resized = resize_bilinear(img, policy.target_h, policy.target_w);

  const auto pad_h = static_cast<std::size_t>(
      std::lround(policy.pad_fraction * static_cast<double>(policy.target_h)));
  const auto pad_w = static_cast<std::size_t>(
      std::lround(policy.pad_fraction * static_cast<double>(policy.target_w)));

  Image cropped = resized;
  if (pad_h > 0 || pad_w > 0) {
    std::vector<double> fill(resized.channels, 0.0);
    if (policy.pad_mode == AugmentPolicy::PadMode::kMean) {
      for (std::size_t y = 0; y < resized.height; ++y)
        for (std::size_t x = 0; x < resized.width; ++x)
          for (std::size_t c = 0; c < resized.channels; ++c) fill[c] += resized.at(y, x, c);
      for (auto& v : fill) v /= static_cast<double>(resized.height * resized.width);
    }
    Image padded = Image::create(resized.height + 2 * pad_h, resized.width + 2 * pad_w,
                                 resized.channels);
    for (std::size_t y = 0; y < padded.height; ++y)
      for (std::size_t x = 0; x < padded.width; ++x)
        for (std::size_t c = 0; c < padded.channels; ++c) padded.at(y, x, c) = fill[c];
    for (std::size_t y = 0; y < resized.height; ++y)
      for (std::size_t x = 0; x < resized.width; ++x)
        for (std::size_t c = 0; c < resized.channels; ++c)
          padded.at(y + pad_h, x + pad_w, c) = resized.at(y, x, c);

    const auto oy = static_cast<std::size_t>(rng.uniform_int(0, 2 * static_cast<std::int64_t>(pad_h)));
    const auto ox = static_cast<std::size_t>(rng.uniform_int(0, 2 * static_cast<std::int64_t>(pad_w)));
    cropped = Image::create(policy.target_h, policy.target_w, resized.channels);
    for (std::size_t y = 0; y < policy.target_h; ++y)
      for (std::size_t x = 0; x < policy.target_w; ++x)
        for (std::size_t c = 0; c < resized.channels; ++c)
          cropped.at(y, x, c) = padded.at(y + oy, x + ox, c);
  }

  if (policy.flip_prob > 0.0 && rng.uniform() < policy.flip_prob) {
    Image flipped = Image::create(cropped.height, cropped.width, cropped.channels);
    for (std::size_t y = 0; y < cropped.height; ++y)
      for (std::size_t x = 0; x < cropped.width; ++x)
        for (std::size_t c = 0; c < cropped.channels; ++c)
          flipped.at(y, x, c) = cropped.at(y, cropped.width - 1 - x, c);
    return flipped;
  }
  return cropped;
}

namespace {

void skip_pnm_separators(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("read_image: cannot open '" + path + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  std::size_t channels;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else fail("read_image: '" + path + "' is not a binary PPM/PGM file");
  long long w = 0, h = 0, maxval = 0;
  skip_pnm_separators(in);
  in >> w;
  skip_pnm_separators(in);
  in >> h;
  skip_pnm_separators(in);
  in >> maxval;
  if (!in || w <= 0 || h <= 0) fail("read_image: malformed header in '" + path + "'");
  if (maxval != 255) fail("read_image: '" + path + "' must use maxval 255");
  in.get();  // single separator before the raster
  Image img = Image::create(static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels);
  std::vector<unsigned char> raw(img.pixels.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    fail("read_image: truncated raster in '" + path + "'");
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.pixels[i] = static_cast<double>(raw[i]) / 255.0;
  return img;
}

void write_image(const Image& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) fail("write_image: unsupported channel count");
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("write_image: cannot open '" + tmp + "'");
    out << (img.channels == 3 ? "P6" : "P5") << "\n"
        << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double v = std::clamp(img.pixels[i], 0.0, 1.0);
      raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
    if (!out) fail("write_image: failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    fail("write_image: cannot move '" + tmp + "' into place");
}

Image quantize8(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels)
    v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
  return out;
}

}  // namespace lupi
