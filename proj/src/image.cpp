#include "pxiqa/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pxiqa {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

unsigned char to_byte(double v) {
  const double r = std::clamp(std::round(v), 0.0, 255.0);
  return static_cast<unsigned char>(r);
}

}  // namespace

Image::Image(Index h, Index w, Index c, double fill)
    : height(h), width(w), channels(c), values(static_cast<std::size_t>(h * w * c), fill) {
  if (h < 0 || w < 0 || c <= 0) throw InvalidArgument("invalid image geometry");
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError(path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    const std::string message = img.message;
    png_image_free(&img);
    throw FormatError(path.string() + ": " + message);
  }
  Image image(img.height, img.width, 3);
  std::copy(pixels.begin(), pixels.end(), image.values.begin());
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw InvalidArgument("PNG output needs 1 or 3 channels");
  std::vector<unsigned char> pixels(image.values.size());
  std::transform(image.values.begin(), image.values.end(), pixels.begin(), to_byte);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw Error("failed writing " + path.string() + ": " + img.message);
  }
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6" && magic != "P5") throw FormatError(path.string() + ": expected binary PPM/PGM");
  auto next_int = [&]() {
    for (;;) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      long v = -1;
      if (!(in >> v) || v < 0) throw FormatError(path.string() + ": malformed header");
      return v;
    }
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  in.get();
  const Index channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(w * h * channels));
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(pixels.size())) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  Image image(h, w, 3);
  for (Index i = 0; i < h * w; ++i) {
    for (Index c = 0; c < 3; ++c) {
      image.values[static_cast<std::size_t>(i * 3 + c)] =
          pixels[static_cast<std::size_t>(i * channels + (channels == 3 ? c : 0))];
    }
  }
  return image;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw InvalidArgument("PPM output needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> pixels(image.values.size());
  std::transform(image.values.begin(), image.values.end(), pixels.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Image read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_ppm(path);
  throw InvalidArgument("unsupported image extension: " + path.string());
}

void write_image(const std::filesystem::path& path, const Image& image) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(path, image);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return write_ppm(path, image);
  throw InvalidArgument("unsupported image extension: " + path.string());
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (double& v : out.values) v = to_byte(v);
  return out;
}

Image pad_reflect(const Image& image, Index height, Index width) {
  if (height < image.height || width < image.width) throw InvalidArgument("padding cannot shrink an image");
  if ((height > image.height && height - image.height >= image.height) ||
      (width > image.width && width - image.width >= image.width)) {
    throw InvalidArgument("reflective padding wider than the image");
  }
  auto reflect = [](Index i, Index n) { return i < n ? i : 2 * (n - 1) - i; };
  Image out(height, width, image.channels);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      for (Index c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = image.at(reflect(y, image.height), reflect(x, image.width), c);
      }
    }
  }
  return out;
}

Image crop(const Image& image, Index y0, Index x0, Index height, Index width) {
  if (y0 < 0 || x0 < 0 || y0 + height > image.height || x0 + width > image.width) {
    throw InvalidArgument("crop window outside the image");
  }
  Image out(height, width, image.channels);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      for (Index c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y0 + y, x0 + x, c);
    }
  }
  return out;
}

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  Tensor<T> t(Shape{1, image.channels, image.height, image.width});
  for (Index c = 0; c < image.channels; ++c) {
    for (Index y = 0; y < image.height; ++y) {
      for (Index x = 0; x < image.width; ++x) t.at(0, c, y, x) = static_cast<T>(image.at(y, x, c) / 255.0);
    }
  }
  return t;
}

template <typename T>
Image from_tensor(const Tensor<T>& tensor, Index n) {
  if (tensor.rank() != 4) throw ShapeError("image tensor must be rank 4, got " + tensor.shape().str());
  if (n < 0 || n >= tensor.dim(0)) throw InvalidArgument("batch index out of range");
  Image image(tensor.dim(2), tensor.dim(3), tensor.dim(1));
  for (Index c = 0; c < image.channels; ++c) {
    for (Index y = 0; y < image.height; ++y) {
      for (Index x = 0; x < image.width; ++x) {
        image.at(y, x, c) = std::clamp(static_cast<double>(tensor.at(n, c, y, x)) * 255.0, 0.0, 255.0);
      }
    }
  }
  return image;
}

template Tensor<float> to_tensor<float>(const Image&);
template Tensor<double> to_tensor<double>(const Image&);
template Image from_tensor<float>(const Tensor<float>&, Index);
template Image from_tensor<double>(const Tensor<double>&, Index);

}  // namespace pxiqa
