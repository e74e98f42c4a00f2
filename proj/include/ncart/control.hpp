#pragma once

#include "ncart/dataset.hpp"
#include "ncart/probe.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ncart {

/// Source-side labels obtained by projecting target annotations through alignments.
struct ProjectedLabels {
  std::vector<std::pair<TokenIndex, std::string>> labels;  // sorted by token
  std::size_t conflicting = 0;  // aligned to target words with different labels ("both"), excluded
  std::size_t unlabeled = 0;    // considered but aligned to no labeled target word
};

/// For each source token (restricted to tokens annotated in `source_filter`
/// when given), collects the labels of its aligned target words.
ProjectedLabels project_target_labels(const TokenCorpus& source, const PropertyAnnotation& target,
                                      const AlignmentSet& alignments, const PropertyAnnotation* source_filter = nullptr);

struct TargetPredictiveNeurons {
  std::string property;
  std::vector<LeaderboardEntry> entries;  // best first
  ProjectedLabels projection;
};

/// Ranks every neuron of `model` by how well a Gaussian class probe on its
/// source activations predicts the aligned target word's label.
TargetPredictiveNeurons target_predictive_neurons(const ActivationDataset& ds, const std::string& model,
                                                  const PropertyAnnotation* source_annotation,
                                                  const PropertyAnnotation& target_annotation,
                                                  const AlignmentSet& alignments, const ProbeOptions& options = {});

/// alpha = mu_from + beta * (mu_from - mu_to).
constexpr double compute_alpha(double mu_from, double mu_to, double beta) { return mu_from + beta * (mu_from - mu_to); }

struct PlanNeuron {
  std::size_t id = 0;
  double mu1 = 0.0;  // mean activation over from-class tokens
  double mu2 = 0.0;  // mean activation over to-class tokens
  double alpha = 0.0;
};

struct ControlPlan {
  std::string property;
  std::string from;
  std::string to;
  double beta = 0.0;
  std::vector<PlanNeuron> neurons;
  std::vector<TokenIndex> positions;

  /// Checks alpha consistency, k >= 1, and bounds against a corpus / width.
  void validate(const TokenCorpus& corpus, std::size_t num_neurons) const;
};

/// Builds a plan: class means from the labeled tokens, positions = every token labeled `from`.
ControlPlan make_plan(const ActivationDataset& ds, const std::string& model,
                      const std::vector<std::pair<TokenIndex, std::string>>& labels, const std::string& property,
                      const std::string& from, const std::string& to, const std::vector<std::size_t>& neurons,
                      double beta);

/// Sets every planned (position, neuron) entry to that neuron's alpha.
ActivationMatrix apply_control(const ActivationMatrix& x, const TokenCorpus& corpus, const ControlPlan& plan);

struct SuccessReport {
  std::string from;
  std::string to;
  std::size_t to_count = 0;
  std::size_t from_count = 0;
  std::size_t both = 0;
  std::size_t neither = 0;
  std::size_t missing_alignment = 0;  // subset of `neither` with no alignment link at all

  std::size_t total() const { return to_count + from_count + both + neither; }
  double rate() const { return total() ? static_cast<double>(to_count) / static_cast<double>(total()) : 0.0; }
  /// Success rate in percent, rounded half-up to `decimals` places.
  double percent(int decimals = 0) const;
};

/// Classifies each planned position by the union of labels of its aligned output words.
SuccessReport score_success(const PropertyAnnotation& output_tags, const AlignmentSet& alignments,
                            const ControlPlan& plan);

/// Fixed linear threshold rule standing in for a decoder: an output word
/// gets `above_label` when the neuron's activation exceeds the threshold,
/// `below_label` otherwise. Alignments are the identity.
struct ThresholdDecoder {
  std::size_t neuron = 0;
  double threshold = 0.0;
  std::string above_label;
  std::string below_label;
};

struct DecodedOutput {
  TokenCorpus tokens;
  PropertyAnnotation tags;
  AlignmentSet alignments;
};

DecodedOutput synthetic_decoder_roundtrip(const ActivationMatrix& x, const TokenCorpus& corpus,
                                          const ThresholdDecoder& decoder, const std::string& property);

/// Applies the plan to the model's activations, then decodes.
DecodedOutput synthetic_decoder_roundtrip(const ActivationDataset& ds, const std::string& model,
                                          const ControlPlan& plan, const ThresholdDecoder& decoder);

}  // namespace ncart
