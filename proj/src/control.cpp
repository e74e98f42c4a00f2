#include "ncart/control.hpp"

#include "ncart/error.hpp"

#include <cmath>
#include <set>

namespace ncart {

ProjectedLabels project_target_labels(const TokenCorpus& source, const PropertyAnnotation& target,
                                      const AlignmentSet& alignments, const PropertyAnnotation* source_filter) {
  if (alignments.num_sentences() != source.num_sentences())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "alignments cover " +
                                                                     std::to_string(alignments.num_sentences()) +
                                                                     " sentences, corpus has " +
                                                                     std::to_string(source.num_sentences()));
  ProjectedLabels out;
  for (std::size_t s = 0; s < source.num_sentences(); ++s) {
    for (std::size_t k = 0; k < source.sentence_length(s); ++k) {
      if (source_filter && !source_filter->find({s, k})) continue;
      std::set<std::string> labels;
      for (auto t : alignments.targets_of(s, k))
        if (const auto* label = target.find({s, t})) labels.insert(*label);
      if (labels.empty()) {
        ++out.unlabeled;
      } else if (labels.size() > 1) {
        ++out.conflicting;
      } else {
        out.labels.emplace_back(TokenIndex{s, k}, *labels.begin());
      }
    }
  }
  return out;
}

TargetPredictiveNeurons target_predictive_neurons(const ActivationDataset& ds, const std::string& model,
                                                  const PropertyAnnotation* source_annotation,
                                                  const PropertyAnnotation& target_annotation,
                                                  const AlignmentSet& alignments, const ProbeOptions& options) {
  TargetPredictiveNeurons out;
  out.property = target_annotation.property_name;
  out.projection = project_target_labels(ds.corpus(), target_annotation, alignments, source_annotation);
  if (out.projection.labels.empty())
    throw ValidationError(ValidationError::Code::kInvalidArgument,
                          "no source token is aligned to a labeled target word for '" + out.property + "'");
  const auto split = split_rows(out.projection.labels, ds.corpus(), options.split);
  out.entries = score_all_neurons(ds.model(model), split, options);
  return out;
}

void ControlPlan::validate(const TokenCorpus& corpus, std::size_t num_neurons) const {
  if (neurons.empty()) throw ValidationError(ValidationError::Code::kInvalidArgument, "control plan has no neurons");
  std::set<std::size_t> ids;
  for (const auto& n : neurons) {
    if (n.id >= num_neurons)
      throw ValidationError(ValidationError::Code::kOutOfBounds, "plan neuron " + std::to_string(n.id) +
                                                                     " outside model with " +
                                                                     std::to_string(num_neurons) + " neurons");
    if (!ids.insert(n.id).second)
      throw ValidationError(ValidationError::Code::kDuplicate, "plan lists neuron " + std::to_string(n.id) + " twice");
    if (n.alpha != compute_alpha(n.mu1, n.mu2, beta))
      throw ValidationError(ValidationError::Code::kInvalidArgument,
                            "plan neuron " + std::to_string(n.id) + ": alpha != mu1 + beta * (mu1 - mu2)");
  }
  for (const auto& p : positions)
    if (!corpus.contains(p))
      throw ValidationError(ValidationError::Code::kOutOfBounds, "plan position (" + std::to_string(p.sentence) +
                                                                     ", " + std::to_string(p.token) +
                                                                     ") outside corpus");
}

ControlPlan make_plan(const ActivationDataset& ds, const std::string& model,
                      const std::vector<std::pair<TokenIndex, std::string>>& labels, const std::string& property,
                      const std::string& from, const std::string& to, const std::vector<std::size_t>& neurons,
                      double beta) {
  const auto& rec = ds.model(model);
  ControlPlan plan;
  plan.property = property;
  plan.from = from;
  plan.to = to;
  plan.beta = beta;
  std::vector<std::size_t> from_rows, to_rows;
  for (const auto& [idx, label] : labels) {
    if (label == from) {
      from_rows.push_back(ds.corpus().row(idx));
      plan.positions.push_back(idx);
    } else if (label == to) {
      to_rows.push_back(ds.corpus().row(idx));
    }
  }
  if (from_rows.empty() || to_rows.empty())
    throw ValidationError(ValidationError::Code::kInvalidArgument,
                          "need tokens of both classes '" + from + "' and '" + to + "' to estimate means");
  auto class_mean = [&](std::size_t neuron, const std::vector<std::size_t>& rows) {
    double s = 0.0;
    for (auto r : rows) s += rec.activations(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(neuron));
    return s / static_cast<double>(rows.size());
  };
  for (auto n : neurons) {
    if (n >= rec.num_neurons())
      throw ValidationError(ValidationError::Code::kOutOfBounds, "neuron " + std::to_string(n) + " outside model");
    PlanNeuron pn{n, class_mean(n, from_rows), class_mean(n, to_rows), 0.0};
    pn.alpha = compute_alpha(pn.mu1, pn.mu2, beta);
    plan.neurons.push_back(pn);
  }
  plan.validate(ds.corpus(), rec.num_neurons());
  return plan;
}

ActivationMatrix apply_control(const ActivationMatrix& x, const TokenCorpus& corpus, const ControlPlan& plan) {
  if (static_cast<std::size_t>(x.rows()) != corpus.num_tokens())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "activation rows do not match corpus tokens");
  plan.validate(corpus, static_cast<std::size_t>(x.cols()));
  ActivationMatrix out = x;
  for (const auto& p : plan.positions) {
    const auto row = static_cast<Eigen::Index>(corpus.row(p));
    for (const auto& n : plan.neurons) out(row, static_cast<Eigen::Index>(n.id)) = static_cast<float>(n.alpha);
  }
  return out;
}

double SuccessReport::percent(int decimals) const {
  const double scale = std::pow(10.0, decimals);
  return std::floor(rate() * 100.0 * scale + 0.5) / scale;
}

SuccessReport score_success(const PropertyAnnotation& output_tags, const AlignmentSet& alignments,
                            const ControlPlan& plan) {
  SuccessReport report;
  report.from = plan.from;
  report.to = plan.to;
  for (const auto& p : plan.positions) {
    const auto targets = alignments.targets_of(p.sentence, p.token);
    if (targets.empty()) {
      ++report.neither;
      ++report.missing_alignment;
      continue;
    }
    bool has_to = false, has_from = false;
    for (auto t : targets) {
      if (const auto* label = output_tags.find({p.sentence, t})) {
        has_to |= *label == plan.to;
        has_from |= *label == plan.from;
      }
    }
    if (has_to && has_from) {
      ++report.both;
    } else if (has_to) {
      ++report.to_count;
    } else if (has_from) {
      ++report.from_count;
    } else {
      ++report.neither;
    }
  }
  return report;
}

DecodedOutput synthetic_decoder_roundtrip(const ActivationMatrix& x, const TokenCorpus& corpus,
                                          const ThresholdDecoder& decoder, const std::string& property) {
  if (decoder.neuron >= static_cast<std::size_t>(x.cols()))
    throw ValidationError(ValidationError::Code::kOutOfBounds,
                          "decoder reads neuron " + std::to_string(decoder.neuron) + " of a " +
                              std::to_string(x.cols()) + "-neuron model");
  if (static_cast<std::size_t>(x.rows()) != corpus.num_tokens())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "activation rows do not match corpus tokens");
  DecodedOutput out;
  out.tokens = corpus;
  out.tags.property_name = property;
  out.tags.side = Side::kTarget;
  out.alignments.links.resize(corpus.num_sentences());
  for (std::size_t s = 0; s < corpus.num_sentences(); ++s) {
    for (std::size_t k = 0; k < corpus.sentence_length(s); ++k) {
      const double v = x(static_cast<Eigen::Index>(corpus.row(s, k)), static_cast<Eigen::Index>(decoder.neuron));
      out.tags.labels.emplace(TokenIndex{s, k}, v > decoder.threshold ? decoder.above_label : decoder.below_label);
      out.alignments.links[s].emplace_back(k, k);
    }
  }
  return out;
}

DecodedOutput synthetic_decoder_roundtrip(const ActivationDataset& ds, const std::string& model,
                                          const ControlPlan& plan, const ThresholdDecoder& decoder) {
  const auto modified = apply_control(ds.model(model).activations, ds.corpus(), plan);
  return synthetic_decoder_roundtrip(modified, ds.corpus(), decoder, plan.property);
}

}  // namespace ncart
