#pragma once

#include "ncart/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ncart {

/// xoshiro256** seeded through splitmix64. Output is identical on every
/// platform for a given seed; normals use Box-Muller on consecutive draws.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct SynthModel {
  std::string id;
  std::size_t neurons = 0;
};

struct SynthCorpus {
  std::size_t sentences = 200;
  std::size_t min_length = 5;
  std::size_t max_length = 30;
  std::size_t vocabulary = 100;
  double zipf_exponent = 1.0;
  double parens_probability = 0.5;  // only used when a parens property is planted
};

struct PlantedFeature {
  enum class Kind { kSharedLatent, kPosition, kTokenIdentity, kDistributed, kLabeledProperty };

  Kind kind = Kind::kSharedLatent;
  double sigma = 0.1;
  /// model id -> planted neuron ids. For shared latents, list position j in
  /// every model carries latent j of this feature.
  std::map<std::string, std::vector<std::size_t>> neurons;

  double scale = 1.0;  // position: activation = scale * within-sentence index

  // distributed: target = sum_j weights[j] * source_model[sources[j]] + noise
  std::string source_model;
  std::vector<std::size_t> sources;
  std::vector<double> weights;

  // labeled property
  std::string name;
  std::string assignment = "random";  // random | parens
  std::vector<std::string> labels;     // parens: {inside, outside}
  std::vector<double> means;
  std::vector<double> probabilities;   // random assignment; empty = uniform
  double coverage = 1.0;               // random assignment: share of annotated tokens
  Side side = Side::kSource;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::vector<SynthModel> models;
  SynthCorpus corpus;
  double noise_sigma = 1.0;  // background neurons ~ N(0, noise_sigma^2)
  std::vector<PlantedFeature> features;

  void validate() const;
};

SynthSpec parse_synth_spec(const std::string& json_text);
SynthSpec load_synth_spec(const std::filesystem::path& path);

struct PlantRecord {
  std::size_t feature = 0;
  PlantedFeature::Kind kind = PlantedFeature::Kind::kSharedLatent;
  std::size_t neuron = 0;
  std::size_t slot = 0;  // latent index within the feature for shared latents
};

struct GroundTruth {
  SynthSpec spec;
  Eigen::MatrixXd latents;  // T x L, shared latents in feature order
  std::vector<std::string> latent_names;
  std::map<std::string, std::vector<PlantRecord>> plants;  // by model
  std::vector<PropertyAnnotation> annotations;
};

struct SynthResult {
  ActivationDataset dataset;
  GroundTruth truth;
};

SynthResult generate(const SynthSpec& spec);

struct ExpectedTopSets {
  std::vector<std::size_t> maxcorr;
  std::vector<std::size_t> mincorr;
  std::vector<std::size_t> linreg;
  double min_precision = 1.0;
};

/// Planted neurons each ranking method must place on top, per model.
std::map<std::string, ExpectedTopSets> oracle_rankings(const GroundTruth& truth);

std::string_view to_string(PlantedFeature::Kind kind);

/// Writes the dataset directory plus truth.json, latents.f32, one TSV per
/// property, and (for target-side properties) target_tokens.txt with identity
/// alignments.txt.
void write_synth_output(const std::filesystem::path& dir, const SynthResult& result);

}  // namespace ncart
