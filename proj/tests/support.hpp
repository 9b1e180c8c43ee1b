#pragma once

#include <cmath>
#include <functional>

#include "pfedlvm/nn.hpp"
#include "pfedlvm/rng.hpp"

namespace testing {

inline pfedlvm::Tensor random_tensor(pfedlvm::Shape shape, pfedlvm::Rng& rng, double scale = 1.0) {
  pfedlvm::Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

/// ||a - b|| / max(||a||, ||b||, tiny).
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
}

/// Central differences of `loss` with respect to every element of `x`.
inline std::vector<double> numeric_grad(pfedlvm::Tensor& x, const std::function<double()>& loss, double h = 1e-5) {
  std::vector<double> g(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss();
    x[i] = orig - h;
    const double down = loss();
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Brute-force zero-padded 3x3 convolution, [N,C,H,W] x [O,C,3,3] -> [N,O,H,W].
inline pfedlvm::Tensor ref_conv(const pfedlvm::Tensor& x, const pfedlvm::Tensor& w, const pfedlvm::Tensor& b) {
  const long N = long(x.dim(0)), C = long(x.dim(1)), H = long(x.dim(2)), W = long(x.dim(3)), O = long(w.dim(0));
  pfedlvm::Tensor y({x.dim(0), w.dim(0), x.dim(2), x.dim(3)});
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < O; ++o)
      for (long i = 0; i < H; ++i)
        for (long j = 0; j < W; ++j) {
          double acc = b[std::size_t(o)];
          for (long c = 0; c < C; ++c)
            for (long di = -1; di <= 1; ++di)
              for (long dj = -1; dj <= 1; ++dj) {
                const long r = i + di, q = j + dj;
                if (r < 0 || q < 0 || r >= H || q >= W) continue;
                acc += w[std::size_t(((o * C + c) * 3 + di + 1) * 3 + dj + 1)] * x[std::size_t(((n * C + c) * H + r) * W + q)];
              }
          y[std::size_t(((n * O + o) * H + i) * W + j)] = acc;
        }
  return y;
}

inline pfedlvm::Tensor ref_relu(pfedlvm::Tensor t) {
  for (auto& v : t.storage()) v = v > 0 ? v : 0;
  return t;
}

inline std::vector<double> values(const pfedlvm::Tensor& t) { return t.storage(); }

}  // namespace testing
