#include "ncart/report.hpp"

#include "ncart/error.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <set>

namespace ncart {

using ojson = nlohmann::ordered_json;

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

namespace {

ojson number(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

ValidationError bad_report(const std::string& what) { return ValidationError(ValidationError::Code::kParse, what); }

}  // namespace

// --- rankings --------------------------------------------------------------

std::string ranking_to_json(const NeuronRanking& r) {
  ojson j;
  j["model"] = r.model_id;
  j["method"] = to_string(r.method);
  ojson params = ojson::object();
  for (const auto& [k, v] : r.params) params[k] = number(v);
  j["params"] = std::move(params);
  j["corpus"] = r.corpus_id;
  j["other_models"] = r.other_models;
  auto ranking = ojson::array();
  for (const auto& e : r.entries) ranking.push_back({{"unit", e.unit}, {"score", number(e.score)}});
  j["ranking"] = std::move(ranking);
  j["flagged"] = r.flagged_units;
  j["warnings"] = r.warnings;
  ojson per = ojson::object();
  for (const auto& [model, scores] : r.per_model_scores) {
    auto arr = ojson::array();
    for (double s : scores) arr.push_back(number(s));
    per[model] = std::move(arr);
  }
  j["per_model"] = std::move(per);
  return dump(j);
}

std::string ranking_to_csv(const NeuronRanking& r) {
  std::string out = "rank,unit,score\n";
  for (std::size_t i = 0; i < r.entries.size(); ++i)
    out += std::to_string(i + 1) + ',' + std::to_string(r.entries[i].unit) + ',' + format_number(r.entries[i].score) + '\n';
  return out;
}

NeuronRanking ranking_from_json(const std::string& text) {
  NeuronRanking r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.model_id = j.at("model").get<std::string>();
    r.method = parse_rank_method(j.at("method").get<std::string>());
    r.corpus_id = j.value("corpus", std::string{});
    r.other_models = j.value("other_models", std::vector<std::string>{});
    const auto params = j.value("params", nlohmann::json::object());
    for (const auto& [k, v] : params.items())
      r.params[k] = v.is_null() ? std::nan("") : v.get<double>();
    std::set<std::size_t> seen;
    for (const auto& e : j.at("ranking")) {
      RankEntry entry;
      entry.unit = e.at("unit").get<std::size_t>();
      entry.score = e.at("score").is_null() ? std::numeric_limits<double>::infinity() : e.at("score").get<double>();
      if (!seen.insert(entry.unit).second) throw bad_report("ranking lists unit " + std::to_string(entry.unit) + " twice");
      r.entries.push_back(entry);
    }
    for (std::size_t i = 0; i < r.entries.size(); ++i)
      if (!seen.count(i)) throw bad_report("ranking is not a permutation: unit " + std::to_string(i) + " missing");
    r.flagged_units = j.value("flagged", std::vector<std::size_t>{});
    r.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw bad_report(std::string("ranking report: ") + e.what());
  }
  return r;
}

// --- erasure curves ------------------------------------------------------------

std::string curve_to_csv(const ErasureCurve& curve) {
  std::string out = "origin,k,fraction,score\n";
  for (const auto* points : {&curve.top, &curve.bottom}) {
    const char* origin = points == &curve.top ? "top" : "bottom";
    for (const auto& p : *points)
      out += std::string(origin) + ',' + std::to_string(p.k) + ',' + format_number(p.fraction) + ',' +
             format_number(p.score) + '\n';
  }
  return out;
}

std::string curve_to_json(const ErasureCurve& curve, bool higher_is_better) {
  ojson j;
  j["model"] = curve.model_id;
  j["scorer"] = curve.scorer;
  j["higher_is_better"] = higher_is_better;
  j["dimension"] = curve.dimension;
  auto points = ojson::array();
  for (const auto* list : {&curve.top, &curve.bottom}) {
    const char* origin = list == &curve.top ? "top" : "bottom";
    for (const auto& p : *list)
      points.push_back({{"origin", origin}, {"k", p.k}, {"fraction", number(p.fraction)}, {"score", number(p.score)}});
  }
  j["points"] = std::move(points);
  return dump(j);
}

// --- probes --------------------------------------------------------------------

namespace {

std::vector<std::string> class_labels(const std::vector<LeaderboardEntry>& entries) {
  std::set<std::string> labels;
  for (const auto& e : entries)
    for (const auto& c : e.classes) labels.insert(c.label);
  return {labels.begin(), labels.end()};
}

ojson entry_json(const LeaderboardEntry& e) {
  ojson j;
  j["neuron"] = e.neuron;
  j["metric"] = number(e.metric);
  j["accuracy"] = number(e.accuracy);
  ojson f1 = ojson::object();
  for (const auto& c : e.classes) f1[c.label] = c.f1 ? number(*c.f1) : ojson("absent");
  j["f1"] = std::move(f1);
  ojson ranks = ojson::object();
  for (const auto& [method, rank] : e.ranks) ranks[method] = rank;
  j["ranks"] = std::move(ranks);
  return j;
}

}  // namespace

std::string leaderboard_to_csv(const ProbeReport& report) {
  const auto labels = class_labels(report.entries);
  std::string out = "neuron,metric,accuracy";
  for (const auto& l : labels) out += ",f1:" + l;
  out += ",maxcorr_rank,mincorr_rank,linreg_rank\n";
  for (const auto& e : report.entries) {
    out += std::to_string(e.neuron) + ',' + format_number(e.metric) + ',' + format_number(e.accuracy);
    for (const auto& l : labels) {
      out += ',';
      for (const auto& c : e.classes)
        if (c.label == l && c.f1) out += format_number(*c.f1);
    }
    for (const char* method : {"maxcorr", "mincorr", "linreg"}) {
      out += ',';
      if (auto it = e.ranks.find(method); it != e.ranks.end()) out += std::to_string(it->second);
    }
    out += '\n';
  }
  return out;
}

std::string leaderboard_to_json(const ProbeReport& report) {
  ojson j;
  j["property"] = report.property;
  j["model"] = report.model_id;
  j["metric"] = report.metric;
  j["best"] = entry_json(report.best());
  j["second"] = entry_json(report.second());
  auto entries = ojson::array();
  for (const auto& e : report.entries) entries.push_back(entry_json(e));
  j["entries"] = std::move(entries);
  return dump(j);
}

std::string variance_to_json(const std::string& model, std::size_t neuron, const std::string& grouping,
                             const ExplainedVariance& ev) {
  ojson j;
  j["model"] = model;
  j["neuron"] = neuron;
  j["grouping"] = grouping;
  j["explained_fraction"] = number(ev.fraction);
  j["explained_percent"] = number(std::floor(ev.fraction * 100.0 + 0.5));
  j["groups"] = ev.num_groups;
  j["rows"] = ev.num_rows;
  j["small_group_mass"] = number(ev.small_group_mass);
  return dump(j);
}

std::string target_neurons_to_json(const std::string& model, const TargetPredictiveNeurons& result,
                                   const std::string& metric) {
  ojson j;
  j["property"] = result.property;
  j["model"] = model;
  j["metric"] = metric;
  j["pairs"] = result.projection.labels.size();
  j["conflicting"] = result.projection.conflicting;
  j["unlabeled"] = result.projection.unlabeled;
  auto entries = ojson::array();
  for (const auto& e : result.entries) entries.push_back(entry_json(e));
  j["entries"] = std::move(entries);
  return dump(j);
}

// --- control -------------------------------------------------------------------

std::string plan_to_json(const ControlPlan& plan) {
  ojson j;
  j["property"] = plan.property;
  j["from"] = plan.from;
  j["to"] = plan.to;
  auto neurons = ojson::array();
  for (const auto& n : plan.neurons) neurons.push_back({{"id", n.id}, {"mu1", n.mu1}, {"mu2", n.mu2}, {"alpha", n.alpha}});
  j["neurons"] = std::move(neurons);
  j["beta"] = plan.beta;
  auto positions = ojson::array();
  for (const auto& p : plan.positions) positions.push_back({p.sentence, p.token});
  j["positions"] = std::move(positions);
  return dump(j);
}

ControlPlan plan_from_json(const std::string& text) {
  ControlPlan plan;
  try {
    const auto j = nlohmann::json::parse(text);
    plan.property = j.at("property").get<std::string>();
    plan.from = j.at("from").get<std::string>();
    plan.to = j.at("to").get<std::string>();
    plan.beta = j.at("beta").get<double>();
    for (const auto& n : j.at("neurons")) {
      PlanNeuron pn;
      pn.id = n.at("id").get<std::size_t>();
      pn.mu1 = n.at("mu1").get<double>();
      pn.mu2 = n.at("mu2").get<double>();
      pn.alpha = n.contains("alpha") ? n.at("alpha").get<double>() : compute_alpha(pn.mu1, pn.mu2, plan.beta);
      plan.neurons.push_back(pn);
    }
    for (const auto& p : j.at("positions")) {
      if (!p.is_array() || p.size() != 2) throw bad_report("plan positions must be [sentence, token] pairs");
      plan.positions.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw bad_report(std::string("plan file: ") + e.what());
  }
  return plan;
}

std::string success_to_json(const SuccessReport& report) {
  ojson j;
  j["from"] = report.from;
  j["to"] = report.to;
  j["counts"] = {{"to", report.to_count}, {"from", report.from_count}, {"both", report.both},
                 {"neither", report.neither}};
  j["total"] = report.total();
  j["success_rate"] = number(report.rate());
  j["success_percent"] = number(report.percent(0));
  j["missing_alignment"] = report.missing_alignment;
  return dump(j);
}

}  // namespace ncart
