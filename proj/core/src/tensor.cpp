// SPDX-License-Identifier: Apache-2.0
#include "bgic/tensor.hpp"

#include <cmath>
#include <sstream>

#include "bgic/errors.hpp"

namespace bgic::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (data_->size() != numel(shape_)) {
    throw NumericError("tensor value count " + std::to_string(data_->size()) +
                       " does not match shape " + shape_str(shape_));
  }
}

Tensor::Tensor(double scalar)
    : shape_{}, data_(std::make_shared<std::vector<double>>(1, scalar)) {}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> v(numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> v(numel(shape), value);
  return Tensor(std::move(shape), std::move(v));
}

double Tensor::scalar() const {
  if (data_->size() != 1) {
    throw NumericError("expected scalar tensor, got shape " + shape_str(shape_));
  }
  return (*data_)[0];
}

bool Tensor::all_finite() const {
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(const char* what) const {
  if (!all_finite()) {
    throw NumericError(std::string("non-finite values in ") + what);
  }
}

}  // namespace bgic::ad
