#include "ncart/erasure.hpp"

#include "ncart/error.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

namespace ncart {

std::string_view to_string(Origin origin) { return origin == Origin::kTop ? "top" : "bottom"; }

Origin parse_origin(std::string_view text) {
  if (text == "top") return Origin::kTop;
  if (text == "bottom") return Origin::kBottom;
  throw ValidationError(ValidationError::Code::kInvalidArgument, "origin must be top or bottom");
}

ErasureMask mask_neurons(const NeuronRanking& ranking, std::size_t k, Origin origin) {
  const std::size_t d = ranking.entries.size();
  if (k > d)
    throw ValidationError(ValidationError::Code::kOutOfBounds,
                          "k=" + std::to_string(k) + " exceeds ranking size " + std::to_string(d));
  ErasureMask mask;
  mask.kind = ErasureMask::Kind::kNeuronZero;
  mask.origin = origin;
  mask.k = k;
  mask.dimension = d;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& e = origin == Origin::kTop ? ranking.entries[i] : ranking.entries[d - 1 - i];
    mask.units.push_back(e.unit);
  }
  return mask;
}

ActivationMatrix apply_neuron_mask(const ActivationMatrix& x, const ErasureMask& mask) {
  if (mask.kind != ErasureMask::Kind::kNeuronZero)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "apply_neuron_mask: not a neuron mask");
  if (mask.dimension != static_cast<std::size_t>(x.cols()))
    throw ValidationError(ValidationError::Code::kShapeMismatch, "mask built for D=" + std::to_string(mask.dimension) +
                                                                     ", matrix has " + std::to_string(x.cols()) +
                                                                     " columns");
  ActivationMatrix out = x;
  for (auto unit : mask.units) {
    if (unit >= mask.dimension)
      throw ValidationError(ValidationError::Code::kOutOfBounds, "mask unit " + std::to_string(unit) + " >= D");
    out.col(static_cast<Eigen::Index>(unit)).setZero();
  }
  return out;
}

ErasureMask svcca_projection(const Eigen::MatrixXd& c, std::size_t k, Origin origin) {
  const auto cols = static_cast<std::size_t>(c.cols());
  if (k > cols)
    throw ValidationError(ValidationError::Code::kOutOfBounds,
                          "k=" + std::to_string(k) + " exceeds direction count " + std::to_string(cols));
  ErasureMask mask;
  mask.kind = ErasureMask::Kind::kDirectionProject;
  mask.origin = origin;
  mask.k = k;
  mask.dimension = static_cast<std::size_t>(c.rows());
  const auto kept = static_cast<Eigen::Index>(cols - k);
  if (kept == 0) {
    mask.projection = Eigen::MatrixXd::Zero(c.rows(), c.rows());
    return mask;
  }
  const Eigen::MatrixXd retained = origin == Origin::kTop ? c.rightCols(kept) : c.leftCols(kept);
  Eigen::MatrixXd gram = retained.transpose() * retained;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
    mask.ridge_fallback = true;
    gram.diagonal().array() += 1e-10 * std::max(gram.trace() / static_cast<double>(gram.rows()), 1e-300);
    llt.compute(gram);
    if (llt.info() != Eigen::Success) throw NumericalError("svcca_projection: retained directions are degenerate");
  }
  Eigen::MatrixXd p = retained * llt.solve(retained.transpose());
  mask.projection = 0.5 * (p + p.transpose());
  return mask;
}

Eigen::MatrixXd apply_projection(const Eigen::MatrixXd& e, const ErasureMask& mask) {
  if (mask.kind != ErasureMask::Kind::kDirectionProject)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "apply_projection: not a direction mask");
  if (static_cast<std::size_t>(e.cols()) != mask.dimension)
    throw ValidationError(ValidationError::Code::kShapeMismatch, "projection built for " +
                                                                     std::to_string(mask.dimension) +
                                                                     " dimensions, matrix has " +
                                                                     std::to_string(e.cols()));
  return e * mask.projection;
}

ActivationMatrix apply_projection_original(const ActivationMatrix& x, const PcaBasis& basis, const ErasureMask& mask) {
  if (static_cast<std::size_t>(x.cols()) != static_cast<std::size_t>(basis.mean.size()))
    throw ValidationError(ValidationError::Code::kShapeMismatch, "PCA basis does not match matrix width");
  const Eigen::MatrixXd scores = basis.project(x.cast<double>());
  const Eigen::MatrixXd lifted = apply_projection(scores, mask) * basis.components.transpose();
  const Eigen::MatrixXd out = lifted.rowwise() + basis.mean.transpose();
  return out.cast<float>();
}

Scorer constant_scorer(double value) {
  return {"constant", [value](const ActivationMatrix&) { return value; }, true};
}

Scorer linear_probe_scorer(Eigen::MatrixXd targets, std::string name) {
  Eigen::VectorXd variances = (targets.rowwise() - targets.colwise().mean()).colwise().squaredNorm().transpose() /
                              static_cast<double>(targets.rows());
  for (Eigen::Index j = 0; j < variances.size(); ++j)
    if (variances(j) == 0.0) throw NumericalError("linear probe target column " + std::to_string(j) + " is constant");
  return {std::move(name),
          [targets = std::move(targets), variances](const ActivationMatrix& x) {
            const auto fit = ridge_solve_multi(x.cast<double>(), targets);
            return (1.0 - fit.mse.array() / variances.array()).mean();
          },
          true};
}

Scorer ridge_decoder_scorer(const ActivationMatrix& reference, Eigen::MatrixXd targets, std::string name) {
  const auto fit = ridge_solve_multi(reference.cast<double>(), targets);
  return {std::move(name),
          [targets = std::move(targets), weights = fit.weights, bias = fit.bias](const ActivationMatrix& x) {
            if (x.cols() != weights.rows())
              throw ValidationError(ValidationError::Code::kShapeMismatch, "decoder input width mismatch");
            const Eigen::MatrixXd pred = (x.cast<double>() * weights).rowwise() + bias.transpose();
            return (pred - targets).squaredNorm() / static_cast<double>(targets.size());
          },
          false};
}

std::size_t KSpec::resolve(std::size_t dimension) const {
  if (!(value >= 0.0)) throw ValidationError(ValidationError::Code::kInvalidArgument, "k must be non-negative");
  const double k = percent ? std::floor(value / 100.0 * static_cast<double>(dimension) + 0.5) : value;
  if (!percent && k != std::floor(k))
    throw ValidationError(ValidationError::Code::kInvalidArgument, "absolute k must be an integer");
  if (k > static_cast<double>(dimension))
    throw ValidationError(ValidationError::Code::kOutOfBounds, "k=" + std::to_string(k) + " exceeds D=" +
                                                                   std::to_string(dimension));
  return static_cast<std::size_t>(k);
}

std::vector<KSpec> parse_ks(std::string_view text) {
  std::vector<KSpec> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto item = text.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    KSpec spec;
    if (!item.empty() && item.back() == '%') {
      spec.percent = true;
      item.remove_suffix(1);
    }
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), spec.value);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
      throw ValidationError(ValidationError::Code::kParse, "bad k value '" + std::string(text.substr(start, end - start)) + "'");
    out.push_back(spec);
    start = end + 1;
  }
  return out;
}

ScorerError::ScorerError(std::size_t k, Origin origin, const std::string& what)
    : Error("scorer failed at k=" + std::to_string(k) + " (" + std::string(to_string(origin)) + "): " + what),
      k_(k),
      origin_(origin) {}

std::vector<std::size_t> resolve_ks(const std::vector<KSpec>& ks, std::size_t dimension) {
  std::set<std::size_t> resolved{0};
  for (const auto& k : ks) resolved.insert(k.resolve(dimension));
  return {resolved.begin(), resolved.end()};
}

namespace {

template <class MakeMatrix>
ErasureCurve run_curve(std::string model_id, std::size_t dimension, const std::vector<KSpec>& ks, const Scorer& scorer,
                       MakeMatrix&& make_matrix) {
  ErasureCurve curve;
  curve.scorer = scorer.name;
  curve.model_id = std::move(model_id);
  curve.dimension = dimension;
  const auto resolved = resolve_ks(ks, dimension);
  auto evaluate = [&](std::size_t k, Origin origin) {
    try {
      return scorer.score(make_matrix(k, origin));
    } catch (const ScorerError&) {
      throw;
    } catch (const std::exception& e) {
      throw ScorerError(k, origin, e.what());
    }
  };
  const double baseline = evaluate(0, Origin::kTop);
  for (auto k : resolved) {
    const double fraction = static_cast<double>(k) / static_cast<double>(dimension);
    curve.top.push_back({k, fraction, k == 0 ? baseline : evaluate(k, Origin::kTop)});
    curve.bottom.push_back({k, fraction, k == 0 ? baseline : evaluate(k, Origin::kBottom)});
  }
  return curve;
}

}  // namespace

ErasureCurve erasure_curve(const ActivationDataset& ds, const std::string& model, const NeuronRanking& ranking,
                           const std::vector<KSpec>& ks, const Scorer& scorer) {
  const auto& rec = ds.model(model);
  if (ranking.entries.size() != rec.num_neurons())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "ranking has " + std::to_string(ranking.size()) +
                                                                     " units, model '" + model + "' has " +
                                                                     std::to_string(rec.num_neurons()));
  return run_curve(model, rec.num_neurons(), ks, scorer, [&](std::size_t k, Origin origin) {
    return apply_neuron_mask(rec.activations, mask_neurons(ranking, k, origin));
  });
}

ErasureCurve svcca_erasure_curve(const ActivationDataset& ds, const SvccaDirections& directions,
                                 const std::vector<KSpec>& ks, const Scorer& scorer) {
  const auto& rec = ds.model(directions.model_a);
  const Eigen::MatrixXd& c = directions.basis.projection_a;
  return run_curve(directions.model_a, directions.size(), ks, scorer, [&](std::size_t k, Origin origin) {
    return apply_projection_original(rec.activations, directions.pca_a, svcca_projection(c, k, origin));
  });
}

}  // namespace ncart
