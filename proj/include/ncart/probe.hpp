#pragma once

#include "ncart/dataset.hpp"
#include "ncart/ranking.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ncart {

// --- conditional variance --------------------------------------------------

enum class Grouping { kPosition, kToken, kAnnotation };

struct ExplainedVariance {
  double fraction = 0.0;          // 1 - E[Var(x | g)] / Var(x), clamped to [0, 1]
  std::size_t num_groups = 0;
  std::size_t num_rows = 0;
  double small_group_mass = 0.0;  // share of rows in groups with fewer than 5 members
};

/// Law-of-total-variance fraction for values grouped by integer keys
/// (population variances). Throws NumericalError for constant values.
ExplainedVariance explained_variance(std::span<const double> values, std::span<const std::size_t> groups);

/// Group keys per corpus row: within-sentence index, or surface-string id in
/// order of first appearance.
std::vector<std::size_t> position_groups(const TokenCorpus& corpus);
std::vector<std::size_t> token_groups(const TokenCorpus& corpus);

/// Grouping over one neuron of a dataset model. Annotation grouping uses only
/// the annotated rows.
ExplainedVariance explained_variance(const ActivationDataset& ds, const std::string& model, std::size_t neuron,
                                     Grouping grouping, const PropertyAnnotation* annotation = nullptr);

// --- Gaussian class-conditional probe --------------------------------------

/// Examples for a probe: one row per token, one column per selected neuron.
struct LabeledSamples {
  Eigen::MatrixXd values;
  std::vector<std::string> labels;
};

struct GaussianComponent {
  double weight = 1.0;       // within-class mixture weight
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // diagonal
};

struct GaussianClassModel {
  std::vector<std::string> classes;  // sorted; class id = index
  std::vector<double> priors;
  std::vector<std::vector<GaussianComponent>> components;  // per class
  std::vector<std::size_t> neurons;
  std::vector<std::string> dropped_classes;  // fewer than 2 examples at fit time
  Eigen::VectorXd variance_floor;

  /// Class with the highest log posterior; lower class id wins ties.
  std::size_t predict_id(const Eigen::VectorXd& x) const;
  const std::string& predict(const Eigen::VectorXd& x) const { return classes[predict_id(x)]; }
  double log_joint(std::size_t class_id, const Eigen::VectorXd& x) const;
};

struct GmmOptions {
  std::size_t components_per_class = 1;
  std::size_t min_examples = 2;
  double variance_floor_ratio = 1e-6;
  std::size_t max_em_iterations = 200;
};

GaussianClassModel gmm_fit(const LabeledSamples& samples, std::vector<std::size_t> neurons,
                           const GmmOptions& options = {});

struct ClassScore {
  std::string label;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;  // absent when the class does not occur in gold
  std::size_t support = 0;
};

struct ProbeScore {
  std::vector<ClassScore> classes;  // over the union of model classes and gold labels, sorted
  double accuracy = 0.0;
  double macro_f1 = 0.0;  // mean over classes present in gold
  /// confusion[gold][predicted] over `classes` order.
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t total = 0;

  const ClassScore* find(const std::string& label) const;
};

ProbeScore gmm_score(const GaussianClassModel& model, const LabeledSamples& samples);

// --- leaderboard -----------------------------------------------------------

enum class SplitMode { kEvenOdd, kInSample };

struct ProbeOptions {
  std::string metric = "macro-f1";  // macro-f1 | accuracy | f1:<label>
  SplitMode split = SplitMode::kEvenOdd;
  GmmOptions gmm;
};

struct LeaderboardEntry {
  std::size_t neuron = 0;
  double metric = 0.0;
  double accuracy = 0.0;
  std::vector<ClassScore> classes;
  std::map<std::string, std::size_t> ranks;  // method -> 1-based rank, if a ranking was supplied
};

struct ProbeReport {
  std::string property;
  std::string model_id;
  std::string metric;
  std::vector<LeaderboardEntry> entries;  // best first; ties by lower neuron id

  const LeaderboardEntry& best() const { return entries.at(0); }
  const LeaderboardEntry& second() const { return entries.at(1); }
};

double select_metric(const ProbeScore& score, const std::string& metric);

/// Splits labeled rows into fit/eval sets (even/odd sentences or in-sample).
struct ProbeSplit {
  std::vector<std::size_t> fit_rows, eval_rows;
  std::vector<std::string> fit_labels, eval_labels;
};
ProbeSplit split_rows(const std::vector<std::pair<TokenIndex, std::string>>& labeled, const TokenCorpus& corpus,
                      SplitMode mode);

/// Fits and scores a single-neuron probe for every neuron, then sorts.
std::vector<LeaderboardEntry> score_all_neurons(const ModelRecord& model, const ProbeSplit& split,
                                                const ProbeOptions& options);

ProbeReport neuron_leaderboard(const ActivationDataset& ds, const std::string& model,
                               const PropertyAnnotation& annotation, const ProbeOptions& options = {},
                               std::span<const NeuronRanking> rankings = {});

}  // namespace ncart
