#pragma once

#include <functional>

#include "camadapt/models.hpp"
#include "camadapt/ops.hpp"

namespace stub {

// Residue map that ignores its input and emits a fixed value everywhere.
class ConstantResidue : public camadapt::ResidueMap {
 public:
  explicit ConstantResidue(double value) : value_(value) {}
  camadapt::Var residue(const camadapt::Var& images) const override {
    return camadapt::constant(camadapt::Tensor(images.shape(), value_));
  }

 private:
  double value_;
};

// Residue computed by an arbitrary function of the input tensor.
class FunctionResidue : public camadapt::ResidueMap {
 public:
  explicit FunctionResidue(std::function<camadapt::Var(const camadapt::Var&)> fn) : fn_(std::move(fn)) {}
  camadapt::Var residue(const camadapt::Var& images) const override { return fn_(images); }

 private:
  std::function<camadapt::Var(const camadapt::Var&)> fn_;
};

inline camadapt::Tensor filled(std::vector<int> shape, double v) { return camadapt::Tensor(std::move(shape), v); }

}  // namespace stub
