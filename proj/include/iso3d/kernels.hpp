#pragma once

// Layer kernels shared by inference and training. Templated on the scalar so
// the same code can be gradient-checked in double precision.
//
// Layouts: dense weights are [out][in]; volumes are [channel][z][y][x] with
// cubic extent; conv weights are [filter][channel][kz][ky][kx].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace iso3d::kernels {

template <typename T>
void dense_forward(std::span<const T> in, std::size_t rows, std::size_t in_dim, std::span<const T> weight,
                   std::span<const T> bias, std::size_t out_dim, std::span<T> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.data() + r * in_dim;
    T* y = out.data() + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const T* w = weight.data() + o * in_dim;
      T acc = bias[o];
      for (std::size_t i = 0; i < in_dim; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
}

/// Accumulates into d_weight and d_bias; d_in is overwritten unless empty.
template <typename T>
void dense_backward(std::span<const T> in, std::size_t rows, std::size_t in_dim, std::span<const T> weight,
                    std::size_t out_dim, std::span<const T> d_out, std::span<T> d_in, std::span<T> d_weight,
                    std::span<T> d_bias) {
  if (!d_in.empty()) std::fill(d_in.begin(), d_in.end(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.data() + r * in_dim;
    const T* g = d_out.data() + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      if (g[o] == T(0)) continue;
      d_bias[o] += g[o];
      T* dw = d_weight.data() + o * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) dw[i] += g[o] * x[i];
      if (!d_in.empty()) {
        const T* w = weight.data() + o * in_dim;
        T* dx = d_in.data() + r * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) dx[i] += g[o] * w[i];
      }
    }
  }
}

template <typename T>
void relu_inplace(std::span<T> values) {
  for (T& v : values) v = v > T(0) ? v : T(0);
}

/// Zeroes gradient entries whose activation was clamped.
template <typename T>
void relu_backward(std::span<const T> activated, std::span<T> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activated[i] > T(0))) grad[i] = T(0);
  }
}

/// Column-wise max over rows; argmax ties go to the lowest row.
template <typename T>
void max_rows(std::span<const T> in, std::size_t rows, std::size_t cols, std::span<T> out,
              std::span<std::uint32_t> argmax) {
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = in[c];
    argmax[c] = 0;
  }
  for (std::size_t r = 1; r < rows; ++r) {
    const T* row = in.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      if (row[c] > out[c]) {
        out[c] = row[c];
        argmax[c] = static_cast<std::uint32_t>(r);
      }
    }
  }
}

template <typename T>
void max_rows_backward(std::span<const T> d_out, std::span<const std::uint32_t> argmax, std::size_t cols,
                       std::span<T> d_in) {
  std::fill(d_in.begin(), d_in.end(), T(0));
  for (std::size_t c = 0; c < cols; ++c) d_in[argmax[c] * cols + c] += d_out[c];
}

struct ConvShape {
  std::size_t channels;
  std::size_t filters;
  std::size_t extent;  // input and output side length ("same" padding, stride 1)
  std::size_t kernel;  // odd
};

template <typename T>
void conv3d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out) {
  const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(s.extent);
  const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(s.kernel);
  const std::ptrdiff_t pad = k / 2;
  const std::size_t vol = s.extent * s.extent * s.extent;
  const std::size_t kvol = s.kernel * s.kernel * s.kernel;
  for (std::size_t f = 0; f < s.filters; ++f) {
    T* y = out.data() + f * vol;
    std::fill(y, y + vol, bias[f]);
    for (std::size_t c = 0; c < s.channels; ++c) {
      const T* x = in.data() + c * vol;
      const T* w = weight.data() + (f * s.channels + c) * kvol;
      for (std::ptrdiff_t z = 0; z < d; ++z) {
        for (std::ptrdiff_t yy = 0; yy < d; ++yy) {
          for (std::ptrdiff_t xx = 0; xx < d; ++xx) {
            T acc = T(0);
            for (std::ptrdiff_t kz = 0; kz < k; ++kz) {
              const std::ptrdiff_t iz = z + kz - pad;
              if (iz < 0 || iz >= d) continue;
              for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = yy + ky - pad;
                if (iy < 0 || iy >= d) continue;
                const T* xrow = x + (iz * d + iy) * d;
                const T* wrow = w + (kz * k + ky) * k;
                for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix = xx + kx - pad;
                  if (ix < 0 || ix >= d) continue;
                  acc += wrow[kx] * xrow[ix];
                }
              }
            }
            y[(z * d + yy) * d + xx] += acc;
          }
        }
      }
    }
  }
}

/// Accumulates into d_weight and d_bias; d_in is overwritten unless empty.
template <typename T>
void conv3d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                     std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias) {
  const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(s.extent);
  const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(s.kernel);
  const std::ptrdiff_t pad = k / 2;
  const std::size_t vol = s.extent * s.extent * s.extent;
  const std::size_t kvol = s.kernel * s.kernel * s.kernel;
  if (!d_in.empty()) std::fill(d_in.begin(), d_in.end(), T(0));
  for (std::size_t f = 0; f < s.filters; ++f) {
    const T* g = d_out.data() + f * vol;
    for (std::size_t i = 0; i < vol; ++i) d_bias[f] += g[i];
    for (std::size_t c = 0; c < s.channels; ++c) {
      const T* x = in.data() + c * vol;
      const T* w = weight.data() + (f * s.channels + c) * kvol;
      T* dw = d_weight.data() + (f * s.channels + c) * kvol;
      T* dx = d_in.empty() ? nullptr : d_in.data() + c * vol;
      for (std::ptrdiff_t z = 0; z < d; ++z) {
        for (std::ptrdiff_t yy = 0; yy < d; ++yy) {
          for (std::ptrdiff_t xx = 0; xx < d; ++xx) {
            const T go = g[(z * d + yy) * d + xx];
            if (go == T(0)) continue;
            for (std::ptrdiff_t kz = 0; kz < k; ++kz) {
              const std::ptrdiff_t iz = z + kz - pad;
              if (iz < 0 || iz >= d) continue;
              for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = yy + ky - pad;
                if (iy < 0 || iy >= d) continue;
                const std::ptrdiff_t row = (iz * d + iy) * d;
                const std::ptrdiff_t wrow = (kz * k + ky) * k;
                for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix = xx + kx - pad;
                  if (ix < 0 || ix >= d) continue;
                  dw[wrow + kx] += go * x[row + ix];
                  if (dx) dx[row + ix] += go * w[wrow + kx];
                }
              }
            }
          }
        }
      }
    }
  }
}

/// Non-overlapping max pooling with a cubic window; trailing cells that do
/// not fill a window are dropped. argmax holds the input offset within the
/// channel volume, lowest offset on ties.
template <typename T>
void maxpool3d_forward(std::size_t channels, std::size_t extent, std::size_t window, std::span<const T> in,
                       std::span<T> out, std::span<std::uint32_t> argmax) {
  const std::size_t o = extent / window;
  const std::size_t vin = extent * extent * extent;
  const std::size_t vout = o * o * o;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* x = in.data() + c * vin;
    for (std::size_t z = 0; z < o; ++z) {
      for (std::size_t y = 0; y < o; ++y) {
        for (std::size_t xx = 0; xx < o; ++xx) {
          std::size_t best = ((z * window) * extent + y * window) * extent + xx * window;
          for (std::size_t a = 0; a < window; ++a) {
            for (std::size_t b = 0; b < window; ++b) {
              for (std::size_t e = 0; e < window; ++e) {
                const std::size_t idx = ((z * window + a) * extent + (y * window + b)) * extent + xx * window + e;
                if (x[idx] > x[best]) best = idx;
              }
            }
          }
          const std::size_t oi = c * vout + (z * o + y) * o + xx;
          out[oi] = x[best];
          argmax[oi] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
}

template <typename T>
void maxpool3d_backward(std::size_t channels, std::size_t extent, std::size_t window, std::span<const T> d_out,
                        std::span<const std::uint32_t> argmax, std::span<T> d_in) {
  const std::size_t o = extent / window;
  const std::size_t vin = extent * extent * extent;
  const std::size_t vout = o * o * o;
  std::fill(d_in.begin(), d_in.end(), T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < vout; ++i) d_in[c * vin + argmax[c * vout + i]] += d_out[c * vout + i];
  }
}

template <typename T>
void softmax(std::span<const T> logits, std::span<T> probs) {
  const T peak = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - peak);
    sum += probs[i];
  }
  for (T& p : probs) p /= sum;
}

/// Returns -log softmax(logits)[label]; writes d loss / d logits.
template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t label, std::span<T> d_logits) {
  const T peak = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (T v : logits) sum += std::exp(v - peak);
  const T log_z = peak + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) d_logits[i] = std::exp(logits[i] - log_z);
  d_logits[label] -= T(1);
  return log_z - logits[label];
}

}  // namespace iso3d::kernels
