#pragma once

#include <cstdint>
#include <vector>

#include "camadapt/image.hpp"
#include "camadapt/nn.hpp"
#include "json.hpp"

namespace camadapt {

inline constexpr double kLeakySlope = 0.2;
inline constexpr int kEncoderStages = 4;

// Anything that maps an image batch to an additive residue of equal shape.
class ResidueMap {
 public:
  virtual ~ResidueMap() = default;
  virtual Var residue(const Var& images) const = 0;
};

struct GeneratorConfig {
  int base_width = 16;
  int residual_blocks = 8;
  bool zero_head = true;  // start at the identity transform
  bool operator==(const GeneratorConfig&) const = default;
};

// Encoder of four stride-2 convolutions (w, 2w, 4w, 8w), residual trunk at
// 8w, four stride-2 transposed convolutions back to full size and a 3x3
// convolution + tanh head. Every (transposed) convolution is followed by
// LeakyReLU and instance normalisation.
class ResidualGenerator : public ResidueMap {
 public:
  ResidualGenerator(const GeneratorConfig& config, std::uint64_t seed);
  ResidualGenerator(const ResidualGenerator&) = delete;
  ResidualGenerator& operator=(const ResidualGenerator&) = delete;
  ResidualGenerator(ResidualGenerator&&) = default;
  ResidualGenerator& operator=(ResidualGenerator&&) = default;

  // Requires H and W divisible by 16; output in [-1, 1].
  Var residue(const Var& images) const override;

  ResidualGenerator clone() const;
  const GeneratorConfig& config() const { return config_; }
  const nn::ParameterList& parameters() const { return params_; }

  // Head parameters, exposed so tests can build exact stub generators.
  const nn::Conv2d& head() const { return head_; }

 private:
  struct Block {
    nn::Conv2d conv1, conv2;
  };

  GeneratorConfig config_;
  nn::ParameterList params_;
  std::vector<nn::Conv2d> encoder_;
  std::vector<Block> trunk_;
  std::vector<nn::ConvTranspose2d> decoder_;
  nn::Conv2d head_;
};

struct Transformed {
  Var image;    // clamp(input + residue, 0, 1)
  Var residue;  // pre-clamp residue
};

// a_B = a + F(a), clamped to [0, 1] with pass-through gradient inside the range.
Transformed transform(const ResidueMap& generator, const Var& images);
Image transform_image(const ResidueMap& generator, const Image& image);

struct DiscriminatorConfig {
  int input_width = 0;
  int hidden_width = 256;
  bool operator==(const DiscriminatorConfig&) const = default;
};

// Two fully connected layers with LeakyReLU between and a sigmoid output.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, std::uint64_t seed);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  // features [N, input_width] -> logits [N, 1]
  Var logits(const Var& features) const;
  Var probability(const Var& features) const;
  double discriminate(const std::vector<double>& feature_vector) const;

  Discriminator clone() const;
  const DiscriminatorConfig& config() const { return config_; }
  const nn::ParameterList& parameters() const { return params_; }
  const nn::Linear& hidden() const { return hidden_; }
  const nn::Linear& output() const { return output_; }

 private:
  DiscriminatorConfig config_;
  nn::ParameterList params_;
  nn::Linear hidden_, output_;
};

struct ClassifierConfig {
  int input_size = 64;
  int num_classes = 2;
  std::vector<int> stage_widths{16, 32, 64};
  int blocks_per_stage = 2;
  int feature_dim() const { return stage_widths.back(); }
  bool operator==(const ClassifierConfig&) const = default;
};

struct ClassifierOutput {
  Var features;  // [N, n] globally average-pooled penultimate activations
  Var logits;    // [N, num_classes]
};

struct Prediction {
  std::vector<double> logits;
  int label = 0;                     // argmax, lowest index on ties
  std::vector<double> probabilities; // softmax (sigmoid for a single logit)
  double positive_score() const { return probabilities.size() == 1 ? probabilities[0] : probabilities.back(); }
};

// Residual CNN: stem 3x3 convolution, stages of residual blocks whose first
// block downsamples by 2, global average pooling and a linear head.
class Classifier {
 public:
  Classifier(const ClassifierConfig& config, std::uint64_t seed);
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  ClassifierOutput forward(const Var& images) const;

  Classifier clone() const;
  const ClassifierConfig& config() const { return config_; }
  const nn::ParameterList& parameters() const { return params_; }
  const nn::Linear& head() const { return fc_; }

  void freeze() const { params_.set_requires_grad(false); }
  void unfreeze() const { params_.set_requires_grad(true); }

 private:
  struct Block {
    nn::Conv2d conv1, conv2;
    bool has_projection = false;
    nn::Conv2d projection;
  };

  ClassifierConfig config_;
  nn::ParameterList params_;
  nn::Conv2d stem_;
  std::vector<Block> blocks_;
  nn::Linear fc_;
};

Prediction prediction_from_logits(const std::vector<double>& logits);
Prediction classify(const Classifier& classifier, const Image& image);
std::vector<Prediction> classify_batch(const Classifier& classifier, const std::vector<Image>& images);

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);
void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

}  // namespace camadapt
