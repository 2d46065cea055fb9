#include "camadapt/models.hpp"

#include <algorithm>
#include <cmath>

#include "camadapt/error.hpp"
#include "camadapt/ops.hpp"

namespace camadapt {

ResidualGenerator::ResidualGenerator(const GeneratorConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.base_width < 1 || config.residual_blocks < 0) {
    fail(ErrorKind::kConfig, "invalid generator configuration");
  }
  std::mt19937_64 rng(seed);
  const int w = config.base_width;
  int channels = 3;
  for (int i = 0; i < kEncoderStages; ++i) {
    const int out = w << i;
    encoder_.emplace_back(params_, "enc" + std::to_string(i), channels, out, 3, 2, 1,
                          nn::Init::kGan, rng);
    channels = out;
  }
  for (int i = 0; i < config.residual_blocks; ++i) {
    const std::string name = "res" + std::to_string(i);
    trunk_.push_back({nn::Conv2d(params_, name + ".conv1", channels, channels, 3, 1, 1, nn::Init::kGan, rng),
                      nn::Conv2d(params_, name + ".conv2", channels, channels, 3, 1, 1, nn::Init::kGan, rng)});
  }
  for (int i = 0; i < kEncoderStages; ++i) {
    const int out = i == kEncoderStages - 1 ? w : channels / 2;
    decoder_.emplace_back(params_, "dec" + std::to_string(i), channels, out, 4, 2, 1,
                          nn::Init::kGan, rng);
    channels = out;
  }
  head_ = nn::Conv2d(params_, "head", channels, 3, 3, 1, 1,
                     config.zero_head ? nn::Init::kZero : nn::Init::kGan, rng);
}

Var ResidualGenerator::residue(const Var& images) const {
  if (images.value().rank() != 4 || images.dim(1) != 3) {
    fail(ErrorKind::kInvalidArgument, "generator expects [N,3,H,W], got " + images.value().shape_string());
  }
  const int div = 1 << kEncoderStages;
  if (images.dim(2) % div != 0 || images.dim(3) % div != 0) {
    fail(ErrorKind::kInvalidArgument, "generator input " + std::to_string(images.dim(2)) + "x" +
                                          std::to_string(images.dim(3)) +
                                          " is not divisible by 16");
  }
  auto act = [](const Var& v) { return ops::instance_norm(ops::leaky_relu(v, kLeakySlope)); };
  Var h = images;
  for (const auto& conv : encoder_) h = act(conv(h));
  for (const auto& block : trunk_) {
    Var t = act(block.conv1(h));
    t = act(block.conv2(t));
    h = ops::add(h, t);
  }
  for (const auto& tconv : decoder_) h = act(tconv(h));
  return ops::tanh(head_(h));
}

ResidualGenerator ResidualGenerator::clone() const {
  ResidualGenerator copy(config_, 0);
  copy.params_.copy_values_from(params_);
  return copy;
}

Transformed transform(const ResidueMap& generator, const Var& images) {
  Var r = generator.residue(images);
  return {ops::clamp(ops::add(images, r), 0.0, 1.0), r};
}

Image transform_image(const ResidueMap& generator, const Image& image) {
  NoGradGuard no_grad;
  Transformed t = transform(generator, constant(to_tensor(image)));
  return image_from_tensor(t.image.value(), 0);
}

Discriminator::Discriminator(const DiscriminatorConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.input_width < 1 || config.hidden_width < 1) {
    fail(ErrorKind::kConfig, "invalid discriminator configuration");
  }
  std::mt19937_64 rng(seed);
  hidden_ = nn::Linear(params_, "fc1", config.input_width, config.hidden_width, nn::Init::kGan, rng);
  output_ = nn::Linear(params_, "fc2", config.hidden_width, 1, nn::Init::kGan, rng);
}

Var Discriminator::logits(const Var& features) const {
  if (features.value().rank() != 2 || features.dim(1) != config_.input_width) {
    fail(ErrorKind::kInvalidArgument, "discriminator expects width " +
                                          std::to_string(config_.input_width) + ", got " +
                                          features.value().shape_string());
  }
  return output_(ops::leaky_relu(hidden_(features), kLeakySlope));
}

Var Discriminator::probability(const Var& features) const { return ops::sigmoid(logits(features)); }

double Discriminator::discriminate(const std::vector<double>& feature_vector) const {
  NoGradGuard no_grad;
  Tensor t({1, static_cast<int>(feature_vector.size())}, feature_vector);
  return probability(constant(std::move(t))).item();
}

Discriminator Discriminator::clone() const {
  Discriminator copy(config_, 0);
  copy.params_.copy_values_from(params_);
  return copy;
}

Classifier::Classifier(const ClassifierConfig& config, std::uint64_t seed) : config_(config) {
  if (config.stage_widths.empty() || config.blocks_per_stage < 1 || config.num_classes < 1 ||
      config.input_size < 1) {
    fail(ErrorKind::kConfig, "invalid classifier configuration");
  }
  std::mt19937_64 rng(seed);
  int channels = config.stage_widths.front();
  stem_ = nn::Conv2d(params_, "stem", 3, channels, 3, 1, 1, nn::Init::kHe, rng);
  for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
    const int width = config.stage_widths[s];
    for (int b = 0; b < config.blocks_per_stage; ++b) {
      const std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      const int stride = b == 0 ? 2 : 1;
      Block block;
      block.conv1 = nn::Conv2d(params_, name + ".conv1", channels, width, 3, stride, 1, nn::Init::kHe, rng);
      block.conv2 = nn::Conv2d(params_, name + ".conv2", width, width, 3, 1, 1, nn::Init::kHe, rng);
      if (stride != 1 || channels != width) {
        block.has_projection = true;
        block.projection = nn::Conv2d(params_, name + ".proj", channels, width, 1, stride, 0, nn::Init::kHe, rng);
      }
      blocks_.push_back(std::move(block));
      channels = width;
    }
  }
  fc_ = nn::Linear(params_, "fc", channels, config.num_classes, nn::Init::kHe, rng);
}

ClassifierOutput Classifier::forward(const Var& images) const {
  if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) != config_.input_size ||
      images.dim(3) != config_.input_size) {
    fail(ErrorKind::kInvalidArgument, "classifier expects [N,3," + std::to_string(config_.input_size) +
                                          "," + std::to_string(config_.input_size) + "], got " +
                                          images.value().shape_string());
  }
  Var h = ops::leaky_relu(stem_(images), kLeakySlope);
  for (const auto& block : blocks_) {
    Var t = ops::leaky_relu(block.conv1(h), kLeakySlope);
    t = block.conv2(t);
    Var shortcut = block.has_projection ? block.projection(h) : h;
    h = ops::leaky_relu(ops::add(t, shortcut), kLeakySlope);
  }
  Var features = ops::global_avg_pool(h);
  return {features, fc_(features)};
}

Classifier Classifier::clone() const {
  Classifier copy(config_, 0);
  copy.params_.copy_values_from(params_);
  const bool frozen = !params_.entries().empty() && !params_.entries().front().second.requires_grad();
  if (frozen) copy.freeze();
  return copy;
}

Prediction prediction_from_logits(const std::vector<double>& logits) {
  if (logits.empty()) fail(ErrorKind::kInvalidArgument, "empty logits");
  Prediction p;
  p.logits = logits;
  if (logits.size() == 1) {
    const double prob = 1.0 / (1.0 + std::exp(-logits[0]));
    p.probabilities = {prob};
    p.label = prob > 0.5 ? 1 : 0;
    return p;
  }
  p.label = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double zmax = logits[p.label];
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - zmax);
  for (double z : logits) p.probabilities.push_back(std::exp(z - zmax) / denom);
  return p;
}

std::vector<Prediction> classify_batch(const Classifier& classifier, const std::vector<Image>& images) {
  std::vector<Prediction> out;
  if (images.empty()) return out;
  NoGradGuard no_grad;
  const int k = classifier.config().num_classes;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t end = std::min(images.size(), start + kChunk);
    std::vector<Image> chunk(images.begin() + static_cast<long>(start), images.begin() + static_cast<long>(end));
    const Var logits = classifier.forward(constant(to_tensor(chunk))).logits;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const double* z = logits.value().data() + i * k;
      out.push_back(prediction_from_logits(std::vector<double>(z, z + k)));
    }
  }
  return out;
}

Prediction classify(const Classifier& classifier, const Image& image) {
  return classify_batch(classifier, {image}).front();
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"base_width", c.base_width}, {"residual_blocks", c.residual_blocks}, {"zero_head", c.zero_head}};
}
void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c = GeneratorConfig{};
  c.base_width = j.value("base_width", c.base_width);
  c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
  c.zero_head = j.value("zero_head", c.zero_head);
}
void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"input_width", c.input_width}, {"hidden_width", c.hidden_width}};
}
void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c = DiscriminatorConfig{};
  c.input_width = j.value("input_width", c.input_width);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
}
void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = {{"input_size", c.input_size},
       {"num_classes", c.num_classes},
       {"stage_widths", c.stage_widths},
       {"blocks_per_stage", c.blocks_per_stage}};
}
void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c = ClassifierConfig{};
  c.input_size = j.value("input_size", c.input_size);
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("stage_widths")) c.stage_widths = j.at("stage_widths").get<std::vector<int>>();
  c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
}

}  // namespace camadapt
