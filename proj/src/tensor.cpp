#include "camadapt/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "camadapt/error.hpp"

namespace camadapt {

std::size_t shape_volume(const std::vector<int>& shape) {
  std::size_t volume = 1;
  for (int d : shape) {
    if (d < 0) fail(ErrorKind::kInvalidArgument, "negative tensor dimension");
    volume *= static_cast<std::size_t>(d);
  }
  return volume;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_volume(shape_)) {
    fail(ErrorKind::kInvalidArgument, "tensor value count does not match shape " + shape_string());
  }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_inplace(const Tensor& other) {
  if (other.size() != size()) {
    fail(ErrorKind::kInvalidArgument,
         "add_inplace size mismatch " + shape_string() + " vs " + other.shape_string());
  }
  std::transform(data_.begin(), data_.end(), other.data_.begin(), data_.begin(), std::plus<>());
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_volume(shape) != size()) {
    fail(ErrorKind::kInvalidArgument, "reshape volume mismatch from " + shape_string());
  }
  return Tensor(std::move(shape), data_);
}

std::string Tensor::shape_string() const {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out << ',';
    out << shape_[i];
  }
  out << ']';
  return out.str();
}

}  // namespace camadapt
