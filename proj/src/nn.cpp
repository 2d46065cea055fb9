#include "camadapt/nn.hpp"

#include <cmath>
#include <cstring>

#include "camadapt/error.hpp"
#include "camadapt/ops.hpp"

namespace camadapt::nn {
namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

Var& ParameterList::add(std::string name, Tensor init) {
  entries_.emplace_back(std::move(name), parameter(std::move(init)));
  return entries_.back().second;
}

std::vector<Var> ParameterList::vars() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& [_, v] : entries_) out.push_back(v);
  return out;
}

std::size_t ParameterList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += v.value().size();
  return n;
}

void ParameterList::set_requires_grad(bool on) const {
  for (const auto& [_, v] : entries_) {
    Var copy = v;
    copy.set_requires_grad(on);
  }
}

void ParameterList::zero_grad() const {
  for (const auto& [_, v] : entries_) {
    Var copy = v;
    copy.zero_grad();
  }
}

std::uint64_t ParameterList::hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, v] : entries_) {
    fnv_mix(h, name.data(), name.size());
    for (int d : v.shape()) fnv_mix(h, &d, sizeof d);
    fnv_mix(h, v.value().data(), v.value().size() * sizeof(double));
  }
  return h;
}

std::vector<std::pair<std::string, Tensor>> ParameterList::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(entries_.size());
  for (const auto& [name, v] : entries_) out.emplace_back(name, v.value());
  return out;
}

void ParameterList::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                               const std::string& prefix) const {
  for (const auto& [name, v] : entries_) {
    const std::string key = prefix + name;
    const Tensor* found = nullptr;
    for (const auto& [tname, t] : tensors) {
      if (tname == key) {
        found = &t;
        break;
      }
    }
    if (!found) fail(ErrorKind::kArtifactMismatch, "checkpoint is missing tensor '" + key + "'");
    if (found->shape() != v.shape()) {
      fail(ErrorKind::kArtifactMismatch, "tensor '" + key + "' has shape " +
                                             found->shape_string() + ", model expects " +
                                             v.value().shape_string());
    }
    Var copy = v;
    copy.mutable_value() = *found;
  }
}

void ParameterList::copy_values_from(const ParameterList& other) const { load_state(other.state()); }

Tensor init_tensor(std::vector<int> shape, Init scheme, int fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  if (scheme == Init::kZero) return t;
  const double std_dev = scheme == Init::kGan ? 0.02 : std::sqrt(2.0 / std::max(fan_in, 1));
  std::normal_distribution<double> dist(0.0, std_dev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Conv2d::Conv2d(ParameterList& params, const std::string& name, int in_channels, int out_channels,
               int kernel, int stride_, int pad_, Init scheme, std::mt19937_64& rng)
    : stride(stride_), pad(pad_) {
  weight = params.add(name + ".weight",
                      init_tensor({out_channels, in_channels, kernel, kernel}, scheme,
                                  in_channels * kernel * kernel, rng));
  bias = params.add(name + ".bias", Tensor({out_channels}));
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

ConvTranspose2d::ConvTranspose2d(ParameterList& params, const std::string& name, int in_channels,
                                 int out_channels, int kernel, int stride_, int pad_, Init scheme,
                                 std::mt19937_64& rng)
    : stride(stride_), pad(pad_) {
  weight = params.add(name + ".weight",
                      init_tensor({in_channels, out_channels, kernel, kernel}, scheme,
                                  in_channels * kernel * kernel, rng));
  bias = params.add(name + ".bias", Tensor({out_channels}));
}

Var ConvTranspose2d::operator()(const Var& x) const {
  return ops::conv_transpose2d(x, weight, bias, stride, pad);
}

Linear::Linear(ParameterList& params, const std::string& name, int in_features, int out_features,
               Init scheme, std::mt19937_64& rng) {
  weight = params.add(name + ".weight",
                      init_tensor({out_features, in_features}, scheme, in_features, rng));
  bias = params.add(name + ".bias", Tensor({out_features}));
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight, bias); }

}  // namespace camadapt::nn
