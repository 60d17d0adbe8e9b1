#include "ccnn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "ccnn/errors.hpp"

namespace ccnn {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer size (floats) per chunk of output rows.
constexpr std::size_t kColumnBudget = std::size_t{1} << 20;

struct RowChunk {
  std::size_t begin;
  std::size_t end;
};

std::vector<RowChunk> row_chunks(const Shape& shape, std::size_t fan_in) {
  const std::size_t per_row = std::max<std::size_t>(1, fan_in * shape.w);
  const std::size_t rows = std::clamp<std::size_t>(kColumnBudget / per_row, 1, shape.h);
  std::vector<RowChunk> chunks;
  for (std::size_t r = 0; r < shape.h; r += rows) chunks.push_back({r, std::min(shape.h, r + rows)});
  return chunks;
}

bool is_pointwise(const ConvLayer& layer) { return layer.kernel_h == 1 && layer.kernel_w == 1; }

// Expands rows [chunk.begin, chunk.end) of one sample into a (fan_in x pixels) matrix.
void im2col(const float* sample, const Shape& shape, const ConvLayer& layer, RowChunk chunk,
            float* cols) {
  const std::size_t h = shape.h;
  const std::size_t w = shape.w;
  const std::size_t pixels = (chunk.end - chunk.begin) * w;
  const auto ph = static_cast<std::ptrdiff_t>(layer.pad_h());
  const auto pw = static_cast<std::ptrdiff_t>(layer.pad_w());
  const auto iw = static_cast<std::ptrdiff_t>(w);

  for (std::size_t ch = 0; ch < layer.in_channels; ++ch) {
    const float* plane = sample + ch * h * w;
    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
        float* row = cols + ((ch * layer.kernel_h + ky) * layer.kernel_w + kx) * pixels;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
        const std::ptrdiff_t x_begin = std::clamp<std::ptrdiff_t>(-dx, 0, iw);
        const std::ptrdiff_t x_end = std::clamp<std::ptrdiff_t>(iw - dx, 0, iw);
        for (std::size_t y = chunk.begin; y < chunk.end; ++y) {
          float* dst = row + (y - chunk.begin) * w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - ph;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h) || x_begin >= x_end) {
            std::fill(dst, dst + w, 0.0f);
            continue;
          }
          const float* src = plane + sy * iw;
          std::fill(dst, dst + x_begin, 0.0f);
          std::memcpy(dst + x_begin, src + x_begin + dx,
                      static_cast<std::size_t>(x_end - x_begin) * sizeof(float));
          std::fill(dst + x_end, dst + w, 0.0f);
        }
      }
    }
  }
}

// Scatter-adds a (fan_in x pixels) column matrix back into one sample's input gradient.
void col2im_add(const float* cols, const Shape& shape, const ConvLayer& layer, RowChunk chunk,
                float* sample_grad) {
  const std::size_t h = shape.h;
  const std::size_t w = shape.w;
  const std::size_t pixels = (chunk.end - chunk.begin) * w;
  const auto ph = static_cast<std::ptrdiff_t>(layer.pad_h());
  const auto pw = static_cast<std::ptrdiff_t>(layer.pad_w());
  const auto iw = static_cast<std::ptrdiff_t>(w);

  for (std::size_t ch = 0; ch < layer.in_channels; ++ch) {
    float* plane = sample_grad + ch * h * w;
    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
        const float* row = cols + ((ch * layer.kernel_h + ky) * layer.kernel_w + kx) * pixels;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
        const std::ptrdiff_t x_begin = std::clamp<std::ptrdiff_t>(-dx, 0, iw);
        const std::ptrdiff_t x_end = std::clamp<std::ptrdiff_t>(iw - dx, 0, iw);
        for (std::size_t y = chunk.begin; y < chunk.end; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - ph;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const float* src = row + (y - chunk.begin) * w;
          float* dst = plane + sy * iw;
          for (std::ptrdiff_t x = x_begin; x < x_end; ++x) dst[x + dx] += src[x];
        }
      }
    }
  }
}

void check_conv_input(const Tensor& input, const ConvLayer& layer) {
  layer.validate();
  const Shape& s = input.shape();
  if (s.c != layer.in_channels) {
    throw InvalidArgument("conv2d: input has " + std::to_string(s.c) +
                          " channels but layer expects " + std::to_string(layer.in_channels));
  }
  if (s.h == 0 || s.w == 0) {
    throw InvalidArgument("conv2d: spatial dims must be >= 1, got " + s.to_string());
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + a.shape().to_string() + " vs " +
                          b.shape().to_string());
  }
}

}  // namespace

ConvLayer ConvLayer::zeros(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h,
                           std::size_t kernel_w) {
  ConvLayer layer;
  layer.in_channels = in_channels;
  layer.out_channels = out_channels;
  layer.kernel_h = kernel_h;
  layer.kernel_w = kernel_w;
  layer.weights.assign(layer.fan_in() * out_channels, 0.0f);
  layer.bias.assign(out_channels, 0.0f);
  layer.validate();
  return layer;
}

void ConvLayer::validate() const {
  if (in_channels == 0 || out_channels == 0) {
    throw InvalidArgument("conv layer needs at least one input and output channel");
  }
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) {
    throw InvalidArgument("conv kernel extents must be odd, got " + std::to_string(kernel_h) + "x" +
                          std::to_string(kernel_w));
  }
  if (weights.size() != fan_in() * out_channels || bias.size() != out_channels) {
    throw InvalidArgument("conv layer parameter arrays do not match its extents");
  }
}

ConvGrads ConvGrads::like(const ConvLayer& layer) {
  return {std::vector<float>(layer.weights.size(), 0.0f), std::vector<float>(layer.bias.size(), 0.0f)};
}

void ConvGrads::zero() {
  std::fill(weights.begin(), weights.end(), 0.0f);
  std::fill(bias.begin(), bias.end(), 0.0f);
}

Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer, const ComputeOptions& opts) {
  check_conv_input(input, layer);
  const Shape& in = input.shape();
  const Shape out_shape{in.n, layer.out_channels, in.h, in.w};
  Tensor output(out_shape);

  const std::size_t fan_in = layer.fan_in();
  const std::size_t plane = in.plane();
  const auto chunks = row_chunks(in, fan_in);
  const Eigen::Map<const RowMatrix> weights(layer.weights.data(),
                                            static_cast<Eigen::Index>(layer.out_channels),
                                            static_cast<Eigen::Index>(fan_in));
  const Eigen::Map<const Eigen::VectorXf> bias(layer.bias.data(),
                                               static_cast<Eigen::Index>(layer.out_channels));

  const float* src = input.data().data();
  float* dst = output.data().data();
  parallel_for(in.n * chunks.size(), opts.threads, [&](std::size_t task) {
    const std::size_t n = task / chunks.size();
    const RowChunk chunk = chunks[task % chunks.size()];
    const auto pixels = static_cast<Eigen::Index>((chunk.end - chunk.begin) * in.w);
    const float* sample = src + n * in.sample();
    StridedMap out(dst + n * out_shape.sample() + chunk.begin * in.w,
                   static_cast<Eigen::Index>(layer.out_channels), pixels,
                   Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
    if (is_pointwise(layer)) {
      ConstStridedMap cols(sample + chunk.begin * in.w, static_cast<Eigen::Index>(fan_in), pixels,
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
      out.noalias() = weights * cols;
    } else {
      thread_local std::vector<float> buffer;
      buffer.resize(fan_in * static_cast<std::size_t>(pixels));
      im2col(sample, in, layer, chunk, buffer.data());
      Eigen::Map<const RowMatrix> cols(buffer.data(), static_cast<Eigen::Index>(fan_in), pixels);
      out.noalias() = weights * cols;
    }
    out.colwise() += bias;
  });
  return output;
}

ConvBackward conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_output,
                             const ComputeOptions& opts) {
  check_conv_input(input, layer);
  const Shape& in = input.shape();
  const Shape expected{in.n, layer.out_channels, in.h, in.w};
  if (grad_output.shape() != expected) {
    throw InvalidArgument("conv2d_backward: gradient shape " + grad_output.shape().to_string() +
                          " does not match forward output " + expected.to_string());
  }

  const std::size_t fan_in = layer.fan_in();
  const std::size_t plane = in.plane();
  const auto out_ch = static_cast<Eigen::Index>(layer.out_channels);
  const auto chunks = row_chunks(in, fan_in);
  const Eigen::Map<const RowMatrix> weights(layer.weights.data(), out_ch,
                                            static_cast<Eigen::Index>(fan_in));

  ConvBackward result{ConvGrads::like(layer), Tensor(in)};
  std::vector<RowMatrix> sample_dw(in.n, RowMatrix::Zero(out_ch, static_cast<Eigen::Index>(fan_in)));
  std::vector<Eigen::VectorXf> sample_db(in.n, Eigen::VectorXf::Zero(out_ch));

  const float* src = input.data().data();
  const float* dy_data = grad_output.data().data();
  float* dx_data = result.input.data().data();

  // Samples are independent: each owns its slice of dX and its partial dW/db.
  parallel_for(in.n, opts.threads, [&](std::size_t n) {
    const float* sample = src + n * in.sample();
    float* sample_dx = dx_data + n * in.sample();
    std::vector<float> cols;
    for (const RowChunk& chunk : chunks) {
      const auto pixels = static_cast<Eigen::Index>((chunk.end - chunk.begin) * in.w);
      ConstStridedMap dy(dy_data + n * expected.sample() + chunk.begin * in.w, out_ch, pixels,
                         Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
      // Plain loop: Eigen's vectorised sum peels by address, which would
      // make the result depend on where the tensor happened to be allocated.
      for (Eigen::Index c = 0; c < out_ch; ++c) {
        float acc = 0.0f;
        for (Eigen::Index i = 0; i < pixels; ++i) acc += dy(c, i);
        sample_db[n][c] += acc;
      }
      if (is_pointwise(layer)) {
        ConstStridedMap x(sample + chunk.begin * in.w, static_cast<Eigen::Index>(fan_in), pixels,
                          Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
        sample_dw[n].noalias() += dy * x.transpose();
        StridedMap dx(sample_dx + chunk.begin * in.w, static_cast<Eigen::Index>(fan_in), pixels,
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
        dx.noalias() = weights.transpose() * dy;
      } else {
        cols.resize(fan_in * static_cast<std::size_t>(pixels));
        im2col(sample, in, layer, chunk, cols.data());
        Eigen::Map<RowMatrix> col_matrix(cols.data(), static_cast<Eigen::Index>(fan_in), pixels);
        sample_dw[n].noalias() += dy * col_matrix.transpose();
        col_matrix.noalias() = weights.transpose() * dy;
        col2im_add(cols.data(), in, layer, chunk, sample_dx);
      }
    }
  });

  Eigen::Map<RowMatrix> dw(result.params.weights.data(), out_ch, static_cast<Eigen::Index>(fan_in));
  Eigen::Map<Eigen::VectorXf> db(result.params.bias.data(), out_ch);
  for (std::size_t n = 0; n < in.n; ++n) {
    dw += sample_dw[n];
    db += sample_db[n];
  }
  return result;
}

namespace {
// Like std::max but a NaN operand wins, so divergence is not masked.
float max_nan(float a, float b) { return (b > a || std::isnan(b)) ? b : a; }
}  // namespace

Tensor maxpool2x2_forward(const Tensor& input) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw InvalidArgument("maxpool2x2: spatial dims must be even, got " + s.to_string());
  }
  Tensor output(Shape{s.n, s.c, s.h / 2, s.w / 2});
  const std::size_t oh = s.h / 2;
  const std::size_t ow = s.w / 2;
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const float* src = input.data().data() + p * s.plane();
    float* dst = output.data().data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const float* r0 = src + 2 * y * s.w;
      const float* r1 = r0 + s.w;
      for (std::size_t x = 0; x < ow; ++x) {
        dst[y * ow + x] = max_nan(max_nan(r0[2 * x], r0[2 * x + 1]), max_nan(r1[2 * x], r1[2 * x + 1]));
      }
    }
  }
  return output;
}

Tensor maxpool2x2_backward(const Tensor& input, const Tensor& grad_output) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw InvalidArgument("maxpool2x2: spatial dims must be even, got " + s.to_string());
  }
  const Shape pooled{s.n, s.c, s.h / 2, s.w / 2};
  if (grad_output.shape() != pooled) {
    throw InvalidArgument("maxpool2x2_backward: gradient shape " + grad_output.shape().to_string() +
                          " does not match " + pooled.to_string());
  }
  Tensor grad(s);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const float* src = input.data().data() + p * s.plane();
    const float* dy = grad_output.data().data() + p * pooled.plane();
    float* dx = grad.data().data() + p * s.plane();
    for (std::size_t y = 0; y < pooled.h; ++y) {
      for (std::size_t x = 0; x < pooled.w; ++x) {
        const std::size_t base = 2 * y * s.w + 2 * x;
        const std::size_t window[4] = {base, base + 1, base + s.w, base + s.w + 1};
        std::size_t best = window[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (src[window[k]] > src[best]) best = window[k];
        }
        dx[best] += dy[y * pooled.w + x];
      }
    }
  }
  return grad;
}

Tensor relu_forward(const Tensor& input) {
  Tensor output(input.shape());
  std::transform(input.data().begin(), input.data().end(), output.data().begin(),
                 [](float v) { return v < 0.0f ? 0.0f : v; });  // NaN passes through
  return output;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  check_same_shape("relu_backward", input, grad_output);
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    grad[i] = input[i] > 0.0f ? grad_output[i] : 0.0f;
  }
  return grad;
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw InvalidArgument("concat_channels: no inputs");
  const Shape& first = inputs.front().shape();
  std::size_t channels = 0;
  bool mismatch = false;
  for (const Tensor& t : inputs) {
    const Shape& s = t.shape();
    mismatch |= s.n != first.n || s.h != first.h || s.w != first.w;
    channels += s.c;
  }
  if (mismatch) {
    std::string shapes;
    for (const Tensor& t : inputs) shapes += (shapes.empty() ? "" : ", ") + t.shape().to_string();
    throw InvalidArgument("concat_channels: batch/spatial dims differ: " + shapes);
  }

  const Shape out_shape{first.n, channels, first.h, first.w};
  Tensor output(out_shape);
  for (std::size_t n = 0; n < first.n; ++n) {
    float* dst = output.sample(n).data();
    for (const Tensor& t : inputs) {
      const auto block = t.sample(n);
      std::copy(block.begin(), block.end(), dst);
      dst += block.size();
    }
  }
  return output;
}

std::vector<Tensor> split_channels(const Tensor& input, std::span<const std::size_t> channels) {
  const Shape& s = input.shape();
  std::size_t total = 0;
  for (std::size_t c : channels) total += c;
  if (total != s.c) {
    throw InvalidArgument("split_channels: blocks sum to " + std::to_string(total) +
                          " channels but tensor has " + std::to_string(s.c));
  }
  std::vector<Tensor> parts;
  parts.reserve(channels.size());
  for (std::size_t c : channels) parts.emplace_back(Shape{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const float* src = input.sample(n).data();
    for (Tensor& part : parts) {
      auto dst = part.sample(n);
      std::copy(src, src + dst.size(), dst.begin());
      src += dst.size();
    }
  }
  return parts;
}

double euclidean_loss(const Tensor& pred, const Tensor& gt) {
  check_same_shape("euclidean_loss", pred, gt);
  const Shape& s = pred.shape();
  if (s.n == 0) throw InvalidArgument("euclidean_loss: empty batch");
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto p = pred.sample(n);
    const auto g = gt.sample(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(g[i]);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(s.n);
}

Tensor euclidean_loss_backward(const Tensor& pred, const Tensor& gt, double upstream) {
  check_same_shape("euclidean_loss_backward", pred, gt);
  const Shape& s = pred.shape();
  if (s.n == 0) throw InvalidArgument("euclidean_loss_backward: empty batch");
  Tensor grad(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto p = pred.sample(n);
    const auto g = gt.sample(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(g[i]);
      sq += d * d;
    }
    if (sq == 0.0) continue;
    const double scale = upstream / (static_cast<double>(s.n) * std::sqrt(sq));
    auto out = grad.sample(n);
    for (std::size_t i = 0; i < p.size(); ++i) {
      out[i] = static_cast<float>(scale * (static_cast<double>(p[i]) - static_cast<double>(g[i])));
    }
  }
  return grad;
}

}  // namespace ccnn
