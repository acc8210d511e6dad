// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace bgic::ad {

class Tape;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of 64-bit floats with copy-on-write storage, so
// recording an op on the tape never duplicates the payload. A Tensor with
// node >= 0 is a handle into the tape that produced it; node < 0 is a plain
// value, safe to share read-only across threads.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<double>>()) {}
  Tensor(Shape shape, std::vector<double> values);
  explicit Tensor(double scalar);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_->size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }

  const std::vector<double>& data() const { return *data_; }
  std::vector<double>& data() {
    ensure_unique();
    return *data_;
  }
  const double* raw() const { return data_->data(); }
  double* raw() {
    ensure_unique();
    return data_->data();
  }

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double& operator[](std::size_t i) {
    ensure_unique();
    return (*data_)[i];
  }

  bool is_scalar() const { return data_->size() == 1; }
  double scalar() const;

  bool all_finite() const;
  // Throws NumericError when any entry is NaN or infinite.
  void check_finite(const char* what) const;

  // Tape handle; -1 when the tensor is a detached value.
  int node = -1;
  Tape* tape = nullptr;

  Tensor detached() const {
    Tensor t = *this;
    t.node = -1;
    t.tape = nullptr;
    return t;
  }

 private:
  void ensure_unique() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  }

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
};

}  // namespace bgic::ad
