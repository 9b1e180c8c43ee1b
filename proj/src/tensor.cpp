#include "pfedlvm/tensor.hpp"

#include <cmath>
#include <algorithm>
#include <cstring>
#include <sstream>

namespace pfedlvm {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw ConfigError("tensor dimension must be positive, got " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ConfigError("tensor dimension must be positive, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw ConfigError("tensor shape " + shape_str(shape_) + " does not match " +
                      std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (a.shape() != b.shape()) {
    throw ConfigError(what + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin >= end || end > t.dim(0)) {
    throw ConfigError("slice_batch: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") for shape " + shape_str(t.shape()));
  }
  const std::size_t row = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<double> data(t.storage().begin() + static_cast<std::ptrdiff_t>(begin * row),
                           t.storage().begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(shape), std::move(data));
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ConfigError("concat_batch: no inputs");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape tail_a(shape.begin() + 1, shape.end());
    Shape tail_b(p.shape().begin() + 1, p.shape().end());
    if (p.rank() != shape.size() || tail_a != tail_b) {
      throw ConfigError("concat_batch: incompatible shapes " + shape_str(shape) + " and " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
  return Tensor(std::move(shape), std::move(data));
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  const auto& first = parts.front();
  if (first.rank() != 4) throw ConfigError("concat_channels: expected NCHW input");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(0) != first.dim(0) || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3)) {
      throw ConfigError("concat_channels: incompatible shapes " + shape_str(first.shape()) + " and " +
                        shape_str(p.shape()));
    }
    channels += p.dim(1);
  }
  const std::size_t batch = first.dim(0);
  const std::size_t plane = first.dim(2) * first.dim(3);
  Tensor out({batch, channels, first.dim(2), first.dim(3)});
  auto dst = out.storage().begin();
  for (std::size_t n = 0; n < batch; ++n) {
    for (const auto& p : parts) {
      const std::size_t chunk = p.dim(1) * plane;
      auto src = p.storage().begin() + static_cast<std::ptrdiff_t>(n * chunk);
      dst = std::copy(src, src + static_cast<std::ptrdiff_t>(chunk), dst);
    }
  }
  return out;
}

Tensor mean_of(std::span<const Tensor> parts) {
  if (parts.empty()) throw ConfigError("mean_of: no inputs");
  Tensor out(parts.front().shape());
  for (const auto& p : parts) {
    require_same_shape(out, p, "mean_of");
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += p[i];
  }
  const auto count = static_cast<double>(parts.size());
  for (auto& v : out.data()) v /= count;
  return out;
}

}  // namespace pfedlvm
