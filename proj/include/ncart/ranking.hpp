#pragma once

#include "ncart/dataset.hpp"
#include "ncart/numerics.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ncart {

enum class RankMethod { kMaxCorr, kMinCorr, kLinReg, kSvcca };

std::string_view to_string(RankMethod method);
RankMethod parse_rank_method(std::string_view name);

struct RankEntry {
  std::size_t unit = 0;
  double score = 0.0;

  bool operator==(const RankEntry&) const = default;
};

/// An ordered permutation of one model's units (neurons, or directions for svcca).
struct NeuronRanking {
  std::string model_id;
  RankMethod method = RankMethod::kMaxCorr;
  std::vector<RankEntry> entries;

  std::string corpus_id;
  std::vector<std::string> other_models;
  std::map<std::string, double> params;
  /// Per-other-model scores before aggregation, indexed by unit id.
  std::map<std::string, std::vector<double>> per_model_scores;
  /// Units whose score is undefined (constant neuron); they sit at the bottom.
  std::vector<std::size_t> flagged_units;
  std::vector<std::string> warnings;

  std::size_t size() const { return entries.size(); }
  std::vector<std::size_t> order() const;
  /// 1-based rank of a unit; throws if absent.
  std::size_t rank_of(std::size_t unit) const;
  /// Score indexed by unit id.
  std::vector<double> scores_by_unit() const;
};

/// Sorts by score (descending or ascending) with lower unit id first on ties.
/// Non-finite scores always sort last.
std::vector<RankEntry> sort_scores(const std::vector<double>& scores, bool descending);

/// |rho| row maxima of model m against every other model: result[m'][i].
std::map<std::string, std::vector<double>> cross_model_max_abs_corr(const ActivationDataset& ds,
                                                                    const std::string& model);

NeuronRanking rank_maxcorr(const ActivationDataset& ds, const std::string& model);
NeuronRanking rank_mincorr(const ActivationDataset& ds, const std::string& model);

struct LinregOptions {
  std::optional<double> lambda;  // default: 1e-3 * trace(centered Gram) / D per regressor model
  bool normalize = true;         // divide MSE by the target neuron's variance
};

NeuronRanking rank_linreg(const ActivationDataset& ds, const std::string& model, const LinregOptions& options = {});

struct SvccaOptions {
  double variance_fraction = 0.99;
  std::optional<double> epsilon;
};

struct SvccaDirections {
  std::string model_a;
  std::string model_b;
  PcaBasis pca_a;
  PcaBasis pca_b;
  CcaBasis basis;

  /// Per-direction scores (the CCA coefficients).
  const Eigen::VectorXd& scores() const { return basis.coefficients; }
  std::size_t size() const { return basis.size(); }
  NeuronRanking as_ranking(const std::string& corpus_id) const;
};

SvccaDirections rank_svcca(const ActivationDataset& ds, const std::string& model, const std::string& other,
                           const SvccaOptions& options = {});

/// Fraction of the first k ranked units that belong to the expected set.
double precision_at_k(const NeuronRanking& ranking, const std::vector<std::size_t>& expected, std::size_t k);

}  // namespace ncart
