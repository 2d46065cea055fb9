#include "camadapt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "camadapt/error.hpp"

namespace camadapt {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    append(&v, sizeof(T));
  }
  void append(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end, std::string source)
      : buf_(buf), end_(end), source_(std::move(source)) {}
  template <typename T>
  T pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
  void read(void* p, std::size_t n) {
    if (n > end_ - pos_) fail(ErrorKind::kArtifactMismatch, source_ + ": truncated checkpoint");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  fail(ErrorKind::kArtifactMismatch, "checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Writer w;
  w.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod(kCheckpointVersion);
  const std::string config = ck.config.dump();
  w.pod(static_cast<std::uint64_t>(config.size()));
  w.append(config.data(), config.size());
  w.pod(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.pod(static_cast<std::uint32_t>(name.size()));
    w.append(name.data(), name.size());
    w.pod(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.pod(static_cast<std::int64_t>(d));
    w.append(t.data(), t.size() * sizeof(double));
  }
  const std::uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());
  w.pod(sum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so an interrupted save never clobbers the previous file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) fail(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string src = path.string();
  if (buf.size() < sizeof(kCheckpointMagic) + 4 + 8 ||
      std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    fail(ErrorKind::kArtifactMismatch, src + ": not a checkpoint file");
  }
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (fnv1a(buf.data(), buf.size() - 8) != stored) {
    fail(ErrorKind::kArtifactMismatch, src + ": checksum mismatch");
  }
  Reader r(buf, buf.size() - 8, src);
  char magic[8];
  r.read(magic, 8);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kArtifactMismatch, src + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_len = r.pod<std::uint64_t>();
  if (config_len > r.remaining()) fail(ErrorKind::kArtifactMismatch, src + ": truncated checkpoint");
  std::string config(config_len, '\0');
  r.read(config.data(), config_len);
  Checkpoint ck;
  try {
    ck.config = nlohmann::json::parse(config);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kArtifactMismatch, src + ": bad checkpoint header: " + e.what());
  }
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint32_t>();
    if (name_len > r.remaining()) fail(ErrorKind::kArtifactMismatch, src + ": truncated checkpoint");
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    const auto rank = r.pod<std::uint32_t>();
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.pod<std::int64_t>();
      if (dim < 0 || dim > (1LL << 30)) fail(ErrorKind::kArtifactMismatch, src + ": bad tensor shape");
      shape.push_back(static_cast<int>(dim));
    }
    if (shape_volume(shape) * sizeof(double) > r.remaining()) {
      fail(ErrorKind::kArtifactMismatch, src + ": truncated checkpoint");
    }
    Tensor t(shape);
    r.read(t.data(), t.size() * sizeof(double));
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) fail(ErrorKind::kArtifactMismatch, src + ": trailing bytes in checkpoint");
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.kind() != expected_kind) {
    fail(ErrorKind::kArtifactMismatch, path.string() + ": expected a " + expected_kind +
                                           " checkpoint, found '" + ck.kind() + "'");
  }
  return ck;
}

std::vector<std::pair<std::string, Tensor>> prefixed_state(const nn::ParameterList& params,
                                                           const std::string& prefix) {
  auto state = params.state();
  for (auto& entry : state) entry.first = prefix + entry.first;
  return state;
}

void save_classifier(const std::filesystem::path& path, const Classifier& classifier,
                     const nlohmann::json& metadata) {
  Checkpoint ck;
  ck.config = {{"kind", "classifier"}, {"classifier", classifier.config()}, {"metadata", metadata}};
  ck.tensors = classifier.parameters().state();
  write_checkpoint(path, ck);
}

Classifier load_classifier(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path, "classifier");
  ClassifierConfig config;
  try {
    config = ck.config.at("classifier").get<ClassifierConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kArtifactMismatch, path.string() + ": bad classifier header: " + e.what());
  }
  Classifier model(config, 0);
  model.parameters().load_state(ck.tensors);
  return model;
}

}  // namespace camadapt
