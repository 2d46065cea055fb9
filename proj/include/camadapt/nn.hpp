#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "camadapt/autograd.hpp"

namespace camadapt::nn {

// Ordered registry of named parameters owned by one model.
class ParameterList {
 public:
  Var& add(std::string name, Tensor init);

  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<Var> vars() const;
  std::size_t scalar_count() const;

  void set_requires_grad(bool on) const;
  void zero_grad() const;

  // FNV-1a over names, shapes and raw parameter bytes.
  std::uint64_t hash() const;

  std::vector<std::pair<std::string, Tensor>> state() const;
  // Throws kArtifactMismatch on missing names or shape differences.
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                  const std::string& prefix = "") const;
  void copy_values_from(const ParameterList& other) const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

enum class Init { kGan, kHe, kZero };

Tensor init_tensor(std::vector<int> shape, Init scheme, int fan_in, std::mt19937_64& rng);

struct Conv2d {
  Var weight;
  Var bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(ParameterList& params, const std::string& name, int in_channels, int out_channels,
         int kernel, int stride, int pad, Init scheme, std::mt19937_64& rng);
  Var operator()(const Var& x) const;
};

// Weight layout [Cin, Cout, k, k].
struct ConvTranspose2d {
  Var weight;
  Var bias;
  int stride = 2;
  int pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterList& params, const std::string& name, int in_channels,
                  int out_channels, int kernel, int stride, int pad, Init scheme,
                  std::mt19937_64& rng);
  Var operator()(const Var& x) const;
};

struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(ParameterList& params, const std::string& name, int in_features, int out_features,
         Init scheme, std::mt19937_64& rng);
  Var operator()(const Var& x) const;
};

}  // namespace camadapt::nn
