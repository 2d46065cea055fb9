#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "camadapt/models.hpp"
#include "json.hpp"

namespace camadapt {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'M', 'A', 'D', 'A', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// A JSON header plus named float64 tensors. Byte layout is documented in
// docs/checkpoint.md.
struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  std::string kind() const { return config.value("kind", std::string()); }
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws kIo when unreadable and kArtifactMismatch on bad magic, version or checksum.
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Throws kArtifactMismatch when the checkpoint kind differs.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

std::vector<std::pair<std::string, Tensor>> prefixed_state(const nn::ParameterList& params,
                                                           const std::string& prefix);

void save_classifier(const std::filesystem::path& path, const Classifier& classifier,
                     const nlohmann::json& metadata = nlohmann::json::object());
Classifier load_classifier(const std::filesystem::path& path);

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ULL);

}  // namespace camadapt
