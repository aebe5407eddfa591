#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace aled {

/// Dense row-major tensor of doubles.
///
/// Conventions used throughout the library: images are (h, w), feature maps
/// and event volumes are (c, h, w), convolution weights are (oc, ic, kh, kw),
/// scalars are (1).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      assert(d >= 0);
      n *= static_cast<std::size_t>(d);
    }
    v_.assign(n, 0.0);
  }

  static Tensor scalar(double x) {
    Tensor t(std::vector<int>{1});
    t.v_[0] = x;
    return t;
  }

  static Tensor full(std::vector<int> shape, double x) {
    Tensor t(std::move(shape));
    for (double& e : t.v_) e = x;
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // (h, w) / (c, h, w) accessors; c() is 1 for plain images.
  int c() const { return rank() >= 3 ? shape_[0] : 1; }
  int h() const { return rank() >= 2 ? shape_[rank() - 2] : 1; }
  int w() const { return rank() >= 1 ? shape_[rank() - 1] : 1; }

  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double& at(int y, int x) { return v_[idx2(y, x)]; }
  double at(int y, int x) const { return v_[idx2(y, x)]; }
  double& at(int ci, int y, int x) { return v_[idx3(ci, y, x)]; }
  double at(int ci, int y, int x) const { return v_[idx3(ci, y, x)]; }

  void fill(double x) {
    for (double& e : v_) e = x;
  }

 private:
  std::size_t idx2(int y, int x) const {
    assert(rank() == 2 && y >= 0 && y < h() && x >= 0 && x < w());
    return static_cast<std::size_t>(y) * w() + x;
  }
  std::size_t idx3(int ci, int y, int x) const {
    assert(rank() == 3 && ci >= 0 && ci < c() && y >= 0 && y < h() && x >= 0 && x < w());
    return (static_cast<std::size_t>(ci) * h() + y) * w() + x;
  }

  std::vector<int> shape_;
  std::vector<double> v_;
};

/// Per-pixel validity flags for an (h, w) image, row-major.
using Mask = std::vector<std::uint8_t>;

/// Reverses the last (width) axis; works for rank-2 and rank-3 tensors.
Tensor flip_horizontal(const Tensor& t);

/// Extracts the [y0, y0+ch) x [x0, x0+cw) window of a rank-2 tensor.
Tensor crop2d(const Tensor& t, int y0, int x0, int ch, int cw);

bool all_finite(const Tensor& t);

}  // namespace aled
