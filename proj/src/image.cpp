#include "memeclf/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <numbers>

#include "memeclf/errors.hpp"
#include "memeclf/io.hpp"

namespace memeclf {

namespace {

RawImage decode_png(const std::string& bytes, const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ImageError("cannot decode PNG " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  RawImage out;
  out.height = img.height;
  out.width = img.width;
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageError("cannot decode PNG " + path + ": " + img.message);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

RawImage decode_jpeg(const std::string& bytes, const std::string& path) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  RawImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError("cannot decode JPEG " + path + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.height = cinfo.output_height;
  out.width = cinfo.output_width;
  out.rgb.resize(static_cast<std::size_t>(out.height * out.width * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

// Binary netpbm: P6 (RGB) or P5 (gray), maxval <= 255.
RawImage decode_pnm(const std::string& bytes, const std::string& path) {
  std::size_t pos = 2;
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > 1'000'000) break;
    }
    if (!any) throw ImageError("malformed PPM header in " + path);
    return v;
  };
  const bool color = bytes[1] == '6';
  const long width = next_int();
  const long height = next_int();
  const long maxval = next_int();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw ImageError("unsupported PPM geometry or depth in " + path);
  }
  ++pos;  // single whitespace before the raster
  const std::size_t channels = color ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(width * height) * channels;
  if (bytes.size() < pos + need) throw ImageError("truncated PPM raster in " + path);
  RawImage out;
  out.height = height;
  out.width = width;
  out.rgb.resize(static_cast<std::size_t>(width * height) * 3);
  for (std::size_t i = 0; i < static_cast<std::size_t>(width * height); ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const auto v = static_cast<unsigned char>(bytes[pos + i * channels + (color ? ch : 0)]);
      out.rgb[i * 3 + ch] = static_cast<std::uint8_t>(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
    }
  }
  return out;
}

float sample_bilinear(const Tensor<float>& img, double y, double x, Index ch) {
  const Index h = img.dim(0);
  const Index w = img.dim(1);
  const Index c = img.dim(2);
  const Index y0 = static_cast<Index>(std::floor(y));
  const Index x0 = static_cast<Index>(std::floor(x));
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const Index y1 = std::min(y0 + 1, h - 1);
  const Index x1 = std::min(x0 + 1, w - 1);
  auto at = [&](Index r, Index col) { return static_cast<double>(img[(r * w + col) * c + ch]); };
  const double top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
  const double bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

}  // namespace

RawImage decode_image(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw ImageError(std::string("cannot read image: ") + e.what());
  }
  auto starts = [&](std::string_view magic) { return bytes.compare(0, magic.size(), magic) == 0; };
  if (starts("\x89PNG")) return decode_png(bytes, path);
  if (starts("\xFF\xD8")) return decode_jpeg(bytes, path);
  if (starts("P6") || starts("P5")) return decode_pnm(bytes, path);
  throw ImageError("unrecognised image format: " + path);
}

std::string encode_ppm(const RawImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

void write_ppm(const RawImage& image, const std::string& path) {
  write_file_atomic(path, encode_ppm(image));
}

Tensor<float> resize_bilinear(const Tensor<float>& image, Index height, Index width) {
  if (image.rank() != 3) throw ShapeError("resize expects [H x W x C], got " + shape_string(image.shape()));
  if (height <= 0 || width <= 0) throw ShapeError("resize target must be positive");
  const Index h = image.dim(0);
  const Index w = image.dim(1);
  const Index c = image.dim(2);
  if (h == height && w == width) return image;
  Tensor<float> out(Shape{height, width, c});
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (Index r = 0; r < height; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    for (Index col = 0; col < width; ++col) {
      const double x = std::clamp((static_cast<double>(col) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      for (Index ch = 0; ch < c; ++ch) out[(r * width + col) * c + ch] = sample_bilinear(image, y, x, ch);
    }
  }
  return out;
}

Tensor<float> preprocess_image(const RawImage& image, Index height, Index width) {
  if (image.height <= 0 || image.width <= 0) throw ImageError("empty image");
  Tensor<float> unit(Shape{image.height, image.width, 3});
  for (std::size_t i = 0; i < image.rgb.size(); ++i) {
    unit[static_cast<Index>(i)] = static_cast<float>(image.rgb[i]) / 255.0f;
  }
  Tensor<float> out = resize_bilinear(unit, height, width);
  out.values() = (out.values().array() - 0.5f) / 0.5f;
  return out;
}

Tensor<float> preprocess_image(const std::string& path, Index height, Index width) {
  return preprocess_image(decode_image(path), height, width);
}

Tensor<float> rotate(const Tensor<float>& image, double angle_deg, float fill) {
  if (image.rank() != 3) throw ShapeError("rotate expects [H x W x C], got " + shape_string(image.shape()));
  if (!std::isfinite(angle_deg)) throw ParameterError("rotation angle must be finite");
  double turns = std::fmod(angle_deg, 360.0);
  if (turns < 0) turns += 360.0;
  double cos_a = std::cos(turns * std::numbers::pi / 180.0);
  double sin_a = std::sin(turns * std::numbers::pi / 180.0);
  if (turns == 0.0) { cos_a = 1; sin_a = 0; }
  if (turns == 90.0) { cos_a = 0; sin_a = 1; }
  if (turns == 180.0) { cos_a = -1; sin_a = 0; }
  if (turns == 270.0) { cos_a = 0; sin_a = -1; }
  if (cos_a == 1.0 && sin_a == 0.0) return image;

  const Index h = image.dim(0);
  const Index w = image.dim(1);
  const Index c = image.dim(2);
  const double cy = static_cast<double>(h - 1) / 2.0;
  const double cx = static_cast<double>(w - 1) / 2.0;
  constexpr double kSlack = 1e-9;
  Tensor<float> out(image.shape());
  for (Index r = 0; r < h; ++r) {
    for (Index col = 0; col < w; ++col) {
      // Output (x right, y down) maps back through the inverse rotation.
      const double dx = static_cast<double>(col) - cx;
      const double dy = static_cast<double>(r) - cy;
      double x = cos_a * dx - sin_a * dy + cx;
      double y = sin_a * dx + cos_a * dy + cy;
      const bool inside = x >= -kSlack && y >= -kSlack && x <= static_cast<double>(w - 1) + kSlack &&
                          y <= static_cast<double>(h - 1) + kSlack;
      for (Index ch = 0; ch < c; ++ch) {
        float v = fill;
        if (inside) {
          x = std::clamp(x, 0.0, static_cast<double>(w - 1));
          y = std::clamp(y, 0.0, static_cast<double>(h - 1));
          v = sample_bilinear(image, y, x, ch);
        }
        out[(r * w + col) * c + ch] = v;
      }
    }
  }
  return out;
}

Tensor<float> augment_rotation(const Tensor<float>& image, RngStream& rng, double max_deg) {
  if (!(max_deg >= 0.0)) throw ParameterError("max rotation must be non-negative");
  return rotate(image, rng.uniform(-max_deg, max_deg));
}

}  // namespace memeclf
