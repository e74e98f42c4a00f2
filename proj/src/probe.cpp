#include "ncart/probe.hpp"

#include "ncart/error.hpp"
#include "ncart/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <unordered_map>

namespace ncart {

// --- conditional variance --------------------------------------------------

ExplainedVariance explained_variance(std::span<const double> values, std::span<const std::size_t> groups) {
  if (values.size() != groups.size())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "explained_variance: every row needs a group key");
  if (values.size() < 2)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "explained_variance: need at least 2 rows");

  struct Group {
    std::size_t count = 0;
    double sum = 0.0;
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();
    double mean = 0.0;
  };
  std::map<std::size_t, Group> stats;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& g = stats[groups[i]];
    ++g.count;
    g.sum += values[i];
    g.min = std::min(g.min, values[i]);
    g.max = std::max(g.max, values[i]);
  }
  const double total_var = variance(values);
  if (total_var == 0.0) throw NumericalError("explained_variance: neuron is constant over the selected rows");

  const double grand_mean = mean(values);
  std::unordered_map<std::size_t, const Group*> lookup;
  for (auto& [key, g] : stats) {
    g.mean = g.sum / static_cast<double>(g.count);
    lookup.emplace(key, &g);
  }
  double within = 0.0, total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Group& g = *lookup.at(groups[i]);
    // A group whose members are all equal contributes exactly zero.
    if (g.min != g.max) within += (values[i] - g.mean) * (values[i] - g.mean);
    total += (values[i] - grand_mean) * (values[i] - grand_mean);
  }
  ExplainedVariance out;
  out.num_rows = values.size();
  out.num_groups = stats.size();
  out.fraction = std::clamp(1.0 - within / total, 0.0, 1.0);
  std::size_t small = 0;
  for (const auto& [_, g] : stats)
    if (g.count < 5) small += g.count;
  out.small_group_mass = static_cast<double>(small) / static_cast<double>(values.size());
  return out;
}

std::vector<std::size_t> position_groups(const TokenCorpus& corpus) {
  std::vector<std::size_t> out;
  out.reserve(corpus.num_tokens());
  for (const auto& sentence : corpus.sentences())
    for (std::size_t k = 0; k < sentence.size(); ++k) out.push_back(k);
  return out;
}

std::vector<std::size_t> token_groups(const TokenCorpus& corpus) {
  std::unordered_map<std::string, std::size_t> ids;
  std::vector<std::size_t> out;
  out.reserve(corpus.num_tokens());
  for (const auto& sentence : corpus.sentences())
    for (const auto& tok : sentence) out.push_back(ids.emplace(tok, ids.size()).first->second);
  return out;
}

ExplainedVariance explained_variance(const ActivationDataset& ds, const std::string& model, std::size_t neuron,
                                     Grouping grouping, const PropertyAnnotation* annotation) {
  const Eigen::VectorXd col = ds.model(model).column(neuron);
  std::vector<double> values;
  std::vector<std::size_t> keys;
  switch (grouping) {
    case Grouping::kPosition:
      keys = position_groups(ds.corpus());
      values.assign(col.data(), col.data() + col.size());
      break;
    case Grouping::kToken:
      keys = token_groups(ds.corpus());
      values.assign(col.data(), col.data() + col.size());
      break;
    case Grouping::kAnnotation: {
      if (annotation == nullptr || annotation->empty())
        throw ValidationError(ValidationError::Code::kInvalidArgument, "annotation grouping needs a non-empty annotation");
      const auto vocab = annotation->vocabulary();
      for (const auto& [idx, label] : annotation->labels) {
        values.push_back(col(static_cast<Eigen::Index>(ds.corpus().row(idx))));
        keys.push_back(static_cast<std::size_t>(std::lower_bound(vocab.begin(), vocab.end(), label) - vocab.begin()));
      }
      break;
    }
  }
  return explained_variance(values, keys);
}

// --- Gaussian class model ----------------------------------------------------

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_normal_diag(const Eigen::VectorXd& x, const GaussianComponent& c) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = x(i) - c.mean(i);
    s += kLog2Pi + std::log(c.variance(i)) + d * d / c.variance(i);
  }
  return -0.5 * s;
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

GaussianComponent moments(const Eigen::MatrixXd& rows, const Eigen::VectorXd& weights, const Eigen::VectorXd& floor) {
  GaussianComponent c;
  const double w = weights.sum();
  c.mean = (rows.transpose() * weights) / w;
  const Eigen::MatrixXd dev = rows.rowwise() - c.mean.transpose();
  c.variance = (dev.array().square().colwise() * weights.array()).colwise().sum().transpose() / w;
  c.variance = c.variance.cwiseMax(floor);
  return c;
}

std::vector<GaussianComponent> fit_class(const Eigen::MatrixXd& rows, std::size_t components, const Eigen::VectorXd& floor,
                                         std::size_t max_iterations) {
  const auto n = static_cast<std::size_t>(rows.rows());
  components = std::max<std::size_t>(1, std::min(components, n / 2));
  if (components == 1) {
    auto c = moments(rows, Eigen::VectorXd::Ones(rows.rows()), floor);
    return {c};
  }
  // Deterministic start: contiguous chunks of the rows sorted by the first column.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rows(static_cast<Eigen::Index>(a), 0) < rows(static_cast<Eigen::Index>(b), 0);
  });
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(rows.rows(), static_cast<Eigen::Index>(components));
  for (std::size_t rank = 0; rank < n; ++rank)
    resp(static_cast<Eigen::Index>(order[rank]), static_cast<Eigen::Index>(rank * components / n)) = 1.0;

  std::vector<GaussianComponent> comps(components);
  double previous = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    for (std::size_t k = 0; k < components; ++k) {
      const Eigen::VectorXd w = resp.col(static_cast<Eigen::Index>(k));
      const double mass = w.sum();
      if (mass <= 0.0) {
        comps[k] = moments(rows, Eigen::VectorXd::Ones(rows.rows()), floor);
        comps[k].weight = 1e-12;
        continue;
      }
      comps[k] = moments(rows, w, floor);
      comps[k].weight = mass / static_cast<double>(n);
    }
    double loglik = 0.0;
    std::vector<double> terms(components);
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      const Eigen::VectorXd x = rows.row(r).transpose();
      for (std::size_t k = 0; k < components; ++k) terms[k] = std::log(comps[k].weight) + log_normal_diag(x, comps[k]);
      const double lse = log_sum_exp(terms);
      loglik += lse;
      for (std::size_t k = 0; k < components; ++k) resp(r, static_cast<Eigen::Index>(k)) = std::exp(terms[k] - lse);
    }
    if (loglik - previous <= 1e-10 * std::abs(loglik)) break;
    previous = loglik;
  }
  return comps;
}

}  // namespace

double GaussianClassModel::log_joint(std::size_t class_id, const Eigen::VectorXd& x) const {
  const auto& comps = components.at(class_id);
  std::vector<double> terms;
  terms.reserve(comps.size());
  for (const auto& c : comps) terms.push_back(std::log(c.weight) + log_normal_diag(x, c));
  return std::log(priors[class_id]) + log_sum_exp(terms);
}

std::size_t GaussianClassModel::predict_id(const Eigen::VectorXd& x) const {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const double s = log_joint(c, x);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

GaussianClassModel gmm_fit(const LabeledSamples& samples, std::vector<std::size_t> neurons, const GmmOptions& options) {
  if (static_cast<std::size_t>(samples.values.rows()) != samples.labels.size())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "gmm_fit: one label per sample row required");
  if (options.components_per_class == 0)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "gmm_fit: components per class must be >= 1");

  std::map<std::string, std::vector<Eigen::Index>> by_class;
  for (std::size_t i = 0; i < samples.labels.size(); ++i)
    by_class[samples.labels[i]].push_back(static_cast<Eigen::Index>(i));

  GaussianClassModel model;
  model.neurons = std::move(neurons);
  std::vector<Eigen::Index> kept_rows;
  for (const auto& [label, rows] : by_class) {
    if (rows.size() < options.min_examples) {
      model.dropped_classes.push_back(label);
      continue;
    }
    model.classes.push_back(label);
    kept_rows.insert(kept_rows.end(), rows.begin(), rows.end());
  }
  if (model.classes.size() < 2)
    throw ValidationError(ValidationError::Code::kInvalidArgument,
                          "gmm_fit: fewer than 2 classes with at least " + std::to_string(options.min_examples) +
                              " examples");

  std::sort(kept_rows.begin(), kept_rows.end());
  const Eigen::MatrixXd kept = samples.values(kept_rows, Eigen::all);
  const Eigen::VectorXd total_var =
      (kept.rowwise() - kept.colwise().mean()).colwise().squaredNorm().transpose() / static_cast<double>(kept.rows());
  model.variance_floor = (options.variance_floor_ratio * total_var).cwiseMax(1e-12);

  const auto n = static_cast<double>(kept_rows.size());
  for (const auto& label : model.classes) {
    const auto& rows = by_class.at(label);
    model.priors.push_back(static_cast<double>(rows.size()) / n);
    const Eigen::MatrixXd class_rows = samples.values(rows, Eigen::all);
    model.components.push_back(
        fit_class(class_rows, options.components_per_class, model.variance_floor, options.max_em_iterations));
  }
  return model;
}

const ClassScore* ProbeScore::find(const std::string& label) const {
  for (const auto& c : classes)
    if (c.label == label) return &c;
  return nullptr;
}

ProbeScore gmm_score(const GaussianClassModel& model, const LabeledSamples& samples) {
  if (static_cast<std::size_t>(samples.values.rows()) != samples.labels.size())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "gmm_score: one label per sample row required");
  if (samples.labels.empty()) throw ValidationError(ValidationError::Code::kInvalidArgument, "gmm_score: no samples");

  std::set<std::string> all(model.classes.begin(), model.classes.end());
  all.insert(samples.labels.begin(), samples.labels.end());
  ProbeScore out;
  std::vector<std::string> labels(all.begin(), all.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = i;

  out.confusion.assign(labels.size(), std::vector<std::size_t>(labels.size(), 0));
  for (Eigen::Index r = 0; r < samples.values.rows(); ++r) {
    const auto& predicted = model.predict(samples.values.row(r).transpose());
    ++out.confusion[index.at(samples.labels[static_cast<std::size_t>(r)])][index.at(predicted)];
  }
  out.total = samples.labels.size();

  std::size_t correct = 0;
  double f1_sum = 0.0;
  std::size_t f1_count = 0;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    std::size_t gold = 0, predicted = 0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      gold += out.confusion[c][j];
      predicted += out.confusion[j][c];
    }
    const std::size_t tp = out.confusion[c][c];
    correct += tp;
    ClassScore cs;
    cs.label = labels[c];
    cs.support = gold;
    if (predicted > 0) cs.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    if (gold > 0) {
      cs.recall = static_cast<double>(tp) / static_cast<double>(gold);
      const double p = cs.precision.value_or(0.0), r = *cs.recall;
      cs.f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
      f1_sum += *cs.f1;
      ++f1_count;
    }
    out.classes.push_back(std::move(cs));
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(out.total);
  out.macro_f1 = f1_count ? f1_sum / static_cast<double>(f1_count) : 0.0;
  return out;
}

// --- leaderboard -----------------------------------------------------------

double select_metric(const ProbeScore& score, const std::string& metric) {
  if (metric == "accuracy") return score.accuracy;
  if (metric == "macro-f1") return score.macro_f1;
  if (metric.rfind("f1:", 0) == 0) {
    const auto* cs = score.find(metric.substr(3));
    return cs && cs->f1 ? *cs->f1 : 0.0;
  }
  throw ValidationError(ValidationError::Code::kInvalidArgument, "unknown probe metric '" + metric + "'");
}

ProbeSplit split_rows(const std::vector<std::pair<TokenIndex, std::string>>& labeled, const TokenCorpus& corpus,
                      SplitMode mode) {
  ProbeSplit split;
  for (const auto& [idx, label] : labeled) {
    const auto row = corpus.row(idx);
    const bool fit = mode == SplitMode::kInSample || idx.sentence % 2 == 0;
    const bool eval = mode == SplitMode::kInSample || idx.sentence % 2 == 1;
    if (fit) {
      split.fit_rows.push_back(row);
      split.fit_labels.push_back(label);
    }
    if (eval) {
      split.eval_rows.push_back(row);
      split.eval_labels.push_back(label);
    }
  }
  if (split.fit_rows.empty() || split.eval_rows.empty())
    throw ValidationError(ValidationError::Code::kInvalidArgument,
                          "probe split left no fit or no evaluation tokens; use in-sample mode");
  return split;
}

namespace {

LabeledSamples gather(const ModelRecord& model, std::size_t neuron, const std::vector<std::size_t>& rows,
                      const std::vector<std::string>& labels) {
  LabeledSamples s;
  s.values.resize(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i)
    s.values(static_cast<Eigen::Index>(i), 0) =
        model.activations(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(neuron));
  s.labels = labels;
  return s;
}

}  // namespace

std::vector<LeaderboardEntry> score_all_neurons(const ModelRecord& model, const ProbeSplit& split,
                                                const ProbeOptions& options) {
  const std::size_t d = model.num_neurons();
  std::vector<LeaderboardEntry> entries(d);
  parallel_for(d, [&](std::size_t n) {
    const auto fitted = gmm_fit(gather(model, n, split.fit_rows, split.fit_labels), {n}, options.gmm);
    const auto score = gmm_score(fitted, gather(model, n, split.eval_rows, split.eval_labels));
    entries[n].neuron = n;
    entries[n].metric = select_metric(score, options.metric);
    entries[n].accuracy = score.accuracy;
    entries[n].classes = score.classes;
  });
  std::stable_sort(entries.begin(), entries.end(), [](const LeaderboardEntry& a, const LeaderboardEntry& b) {
    if (a.metric != b.metric) return a.metric > b.metric;
    return a.neuron < b.neuron;
  });
  return entries;
}

ProbeReport neuron_leaderboard(const ActivationDataset& ds, const std::string& model,
                               const PropertyAnnotation& annotation, const ProbeOptions& options,
                               std::span<const NeuronRanking> rankings) {
  if (annotation.empty())
    throw ValidationError(ValidationError::Code::kInvalidArgument,
                          "property '" + annotation.property_name + "' has no annotated tokens");
  const auto& rec = ds.model(model);
  std::vector<std::pair<TokenIndex, std::string>> labeled(annotation.labels.begin(), annotation.labels.end());
  const auto split = split_rows(labeled, ds.corpus(), options.split);

  ProbeReport report;
  report.property = annotation.property_name;
  report.model_id = model;
  report.metric = options.metric;
  report.entries = score_all_neurons(rec, split, options);
  if (report.entries.size() < 2)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "leaderboard needs at least 2 neurons");
  for (const auto& ranking : rankings) {
    if (ranking.model_id != model || ranking.entries.size() != rec.num_neurons()) continue;
    for (auto& e : report.entries) e.ranks[std::string(to_string(ranking.method))] = ranking.rank_of(e.neuron);
  }
  return report;
}

}  // namespace ncart
