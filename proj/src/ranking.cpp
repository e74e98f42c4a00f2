#include "ncart/ranking.hpp"

#include "ncart/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace ncart {

std::string_view to_string(RankMethod method) {
  switch (method) {
    case RankMethod::kMaxCorr: return "maxcorr";
    case RankMethod::kMinCorr: return "mincorr";
    case RankMethod::kLinReg: return "linreg";
    case RankMethod::kSvcca: return "svcca";
  }
  return "unknown";
}

RankMethod parse_rank_method(std::string_view name) {
  if (name == "maxcorr") return RankMethod::kMaxCorr;
  if (name == "mincorr") return RankMethod::kMinCorr;
  if (name == "linreg") return RankMethod::kLinReg;
  if (name == "svcca") return RankMethod::kSvcca;
  throw ValidationError(ValidationError::Code::kInvalidArgument, "unknown ranking method '" + std::string(name) + "'");
}

std::vector<std::size_t> NeuronRanking::order() const {
  std::vector<std::size_t> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.unit);
  return out;
}

std::size_t NeuronRanking::rank_of(std::size_t unit) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].unit == unit) return i + 1;
  throw ValidationError(ValidationError::Code::kOutOfBounds, "unit " + std::to_string(unit) + " not in ranking");
}

std::vector<double> NeuronRanking::scores_by_unit() const {
  std::vector<double> out(entries.size(), std::numeric_limits<double>::quiet_NaN());
  for (const auto& e : entries) out.at(e.unit) = e.score;
  return out;
}

std::vector<RankEntry> sort_scores(const std::vector<double>& scores, bool descending) {
  std::vector<RankEntry> entries(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) entries[i] = {i, scores[i]};
  std::stable_sort(entries.begin(), entries.end(), [descending](const RankEntry& a, const RankEntry& b) {
    const bool fa = std::isfinite(a.score), fb = std::isfinite(b.score);
    if (fa != fb) return fa;
    if (!fa || a.score == b.score) return a.unit < b.unit;
    return descending ? a.score > b.score : a.score < b.score;
  });
  return entries;
}

namespace {

void require_multi_model(const ActivationDataset& ds, const std::string& model) {
  if (!ds.has_model(model))
    throw ValidationError(ValidationError::Code::kInvalidArgument, "unknown model '" + model + "'");
  if (ds.num_models() < 2)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "cross-model ranking needs at least 2 models");
}

NeuronRanking base_ranking(const ActivationDataset& ds, const std::string& model, RankMethod method) {
  NeuronRanking r;
  r.model_id = model;
  r.method = method;
  r.corpus_id = ds.corpus_id();
  for (const auto& m : ds.models())
    if (m.model_id != model) r.other_models.push_back(m.model_id);
  const auto& rec = ds.model(model);
  for (std::size_t i = 0; i < rec.num_neurons(); ++i)
    if (rec.constant_columns[i]) r.flagged_units.push_back(i);
  return r;
}

}  // namespace

std::map<std::string, std::vector<double>> cross_model_max_abs_corr(const ActivationDataset& ds,
                                                                    const std::string& model) {
  require_multi_model(ds, model);
  const Eigen::MatrixXd x = ds.model(model).to_double();
  std::map<std::string, std::vector<double>> out;
  for (const auto& other : ds.models()) {
    if (other.model_id == model) continue;
    const Eigen::MatrixXd corr = correlation_matrix(x, other.to_double()).cwiseAbs();
    std::vector<double> maxima(static_cast<std::size_t>(corr.rows()));
    for (Eigen::Index i = 0; i < corr.rows(); ++i) maxima[static_cast<std::size_t>(i)] = corr.row(i).maxCoeff();
    out.emplace(other.model_id, std::move(maxima));
  }
  return out;
}

namespace {

NeuronRanking rank_by_correlation(const ActivationDataset& ds, const std::string& model, RankMethod method) {
  auto per_model = cross_model_max_abs_corr(ds, model);
  NeuronRanking r = base_ranking(ds, model, method);
  const std::size_t d = ds.model(model).num_neurons();
  std::vector<double> scores(d, method == RankMethod::kMaxCorr ? 0.0 : 1.0);
  for (const auto& [_, maxima] : per_model) {
    for (std::size_t i = 0; i < d; ++i)
      scores[i] = method == RankMethod::kMaxCorr ? std::max(scores[i], maxima[i]) : std::min(scores[i], maxima[i]);
  }
  r.entries = sort_scores(scores, true);
  r.per_model_scores = std::move(per_model);
  return r;
}

}  // namespace

NeuronRanking rank_maxcorr(const ActivationDataset& ds, const std::string& model) {
  return rank_by_correlation(ds, model, RankMethod::kMaxCorr);
}

NeuronRanking rank_mincorr(const ActivationDataset& ds, const std::string& model) {
  return rank_by_correlation(ds, model, RankMethod::kMinCorr);
}

NeuronRanking rank_linreg(const ActivationDataset& ds, const std::string& model, const LinregOptions& options) {
  require_multi_model(ds, model);
  NeuronRanking r = base_ranking(ds, model, RankMethod::kLinReg);
  const auto& rec = ds.model(model);
  const Eigen::MatrixXd y = rec.to_double();
  const std::size_t d = rec.num_neurons();
  const auto t = ds.num_tokens();

  std::vector<double> target_var(d);
  for (std::size_t i = 0; i < d; ++i) {
    const auto col = y.col(static_cast<Eigen::Index>(i));
    target_var[i] = rec.constant_columns[i] ? 0.0 : (col.array() - col.mean()).square().mean();
  }

  r.params["normalized"] = options.normalize ? 1.0 : 0.0;
  if (options.lambda) r.params["lambda"] = *options.lambda;

  std::vector<double> scores(d, std::numeric_limits<double>::infinity());
  for (const auto& other : ds.models()) {
    if (other.model_id == model) continue;
    if (t < 10 * other.num_neurons())
      r.warnings.push_back("T=" + std::to_string(t) + " < 10*D for regressor model '" + other.model_id + "'");
    const auto fit = ridge_solve_multi(other.to_double(), y, options.lambda);
    if (!options.lambda) r.params["lambda:" + other.model_id] = fit.lambda;
    std::vector<double> per(d);
    for (std::size_t i = 0; i < d; ++i) {
      if (target_var[i] == 0.0) {
        per[i] = std::numeric_limits<double>::infinity();
        continue;
      }
      per[i] = options.normalize ? fit.mse(static_cast<Eigen::Index>(i)) / target_var[i]
                                 : fit.mse(static_cast<Eigen::Index>(i));
      scores[i] = std::min(scores[i], per[i]);
    }
    r.per_model_scores.emplace(other.model_id, std::move(per));
  }
  r.entries = sort_scores(scores, false);
  return r;
}

NeuronRanking SvccaDirections::as_ranking(const std::string& corpus_id) const {
  NeuronRanking r;
  r.model_id = model_a;
  r.method = RankMethod::kSvcca;
  r.corpus_id = corpus_id;
  r.other_models = {model_b};
  r.params["pca_rank_a"] = static_cast<double>(pca_a.rank());
  r.params["pca_rank_b"] = static_cast<double>(pca_b.rank());
  r.params["retained_fraction_a"] = pca_a.retained_fraction;
  r.params["retained_fraction_b"] = pca_b.retained_fraction;
  r.params["epsilon_a"] = basis.epsilon_a;
  r.params["epsilon_b"] = basis.epsilon_b;
  std::vector<double> s(basis.coefficients.data(), basis.coefficients.data() + basis.coefficients.size());
  r.entries = sort_scores(s, true);
  return r;
}

SvccaDirections rank_svcca(const ActivationDataset& ds, const std::string& model, const std::string& other,
                           const SvccaOptions& options) {
  SvccaDirections out;
  out.model_a = model;
  out.model_b = other;
  const Eigen::MatrixXd xa = ds.model(model).to_double();
  out.pca_a = pca(xa, options.variance_fraction);
  const Eigen::MatrixXd ea = out.pca_a.project(xa);
  if (other == model) {
    out.pca_b = out.pca_a;
    out.basis = cca(ea, ea, options.epsilon);
    return out;
  }
  const Eigen::MatrixXd xb = ds.model(other).to_double();
  out.pca_b = pca(xb, options.variance_fraction);
  out.basis = cca(ea, out.pca_b.project(xb), options.epsilon);
  return out;
}

double precision_at_k(const NeuronRanking& ranking, const std::vector<std::size_t>& expected, std::size_t k) {
  if (k == 0) return 0.0;
  const std::set<std::size_t> want(expected.begin(), expected.end());
  std::size_t hits = 0;
  const std::size_t n = std::min(k, ranking.entries.size());
  for (std::size_t i = 0; i < n; ++i) hits += want.count(ranking.entries[i].unit);
  return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace ncart
