#include "ccnn/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ccnn/errors.hpp"

namespace ccnn {
namespace {

// Parses the whitespace/comment separated header fields of a PNM file.
class HeaderParser {
 public:
  HeaderParser(const std::vector<unsigned char>& bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  unsigned long next_number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw FormatError(name_ + ": malformed PNM header");
    }
    unsigned long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > (1ul << 31)) throw FormatError(name_ + ": PNM header value too large");
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError(name_ + ": missing separator before PNM raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  const std::string& name_;
  std::size_t pos_ = 2;
};

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_bytes(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& raster) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << header;
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(name + ": not a binary PGM (P5) or PPM (P6) image");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  HeaderParser header(bytes, name);
  const unsigned long width = header.next_number();
  const unsigned long height = header.next_number();
  const unsigned long maxval = header.next_number();
  if (width == 0 || height == 0) throw FormatError(name + ": zero image dimension");
  if (maxval == 0 || maxval > 65535) throw FormatError(name + ": maxval must be in [1, 65535]");
  const std::size_t offset = header.raster_offset();

  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t samples = channels * height * width;
  if (bytes.size() - offset < samples * sample_bytes) {
    throw FormatError(name + ": raster truncated");
  }

  Tensor image(Shape{1, channels, height, width});
  const unsigned char* raster = bytes.data() + offset;
  // PNM interleaves channels per pixel; the tensor is planar.
  for (std::size_t p = 0; p < height * width; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = p * channels + c;
      const unsigned value = sample_bytes == 1 ? raster[i] : (raster[2 * i] << 8) | raster[2 * i + 1];
      image[c * height * width + p] = std::min(1.0f, static_cast<float>(value) / static_cast<float>(maxval));
    }
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n < 1 || s.c < 1) throw InvalidArgument("write_pgm: empty tensor");
  std::vector<unsigned char> raster(s.plane());
  for (std::size_t i = 0; i < raster.size(); ++i) raster[i] = to_byte(image[i]);
  write_bytes(path, "P5\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n", raster);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n < 1 || s.c != 3) throw InvalidArgument("write_ppm: expected a 3-channel tensor");
  std::vector<unsigned char> raster(3 * s.plane());
  for (std::size_t p = 0; p < s.plane(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) raster[3 * p + c] = to_byte(image[c * s.plane() + p]);
  }
  write_bytes(path, "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n", raster);
}

Tensor to_grayscale(const Tensor& image) {
  const Shape& s = image.shape();
  if (s.c == 1) return image;
  if (s.c != 3) throw InvalidArgument("to_grayscale: expected 1 or 3 channels, got " + s.to_string());
  Tensor gray(Shape{s.n, 1, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const float* src = image.sample(n).data();
    float* dst = gray.sample(n).data();
    for (std::size_t p = 0; p < s.plane(); ++p) {
      const double luma = 0.299 * src[p] + 0.587 * src[s.plane() + p] + 0.114 * src[2 * s.plane() + p];
      dst[p] = static_cast<float>(luma);
    }
  }
  return gray;
}

}  // namespace ccnn
