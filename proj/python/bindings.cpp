#include "ncart/ncart.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ncart;

namespace {

using LabelDict = std::map<std::pair<std::size_t, std::size_t>, std::string>;

std::vector<std::pair<TokenIndex, std::string>> to_labels(const LabelDict& d) {
  std::vector<std::pair<TokenIndex, std::string>> out;
  for (const auto& [k, v] : d) out.emplace_back(TokenIndex{k.first, k.second}, v);
  return out;
}

PropertyAnnotation to_annotation(const LabelDict& d, const std::string& name, Side side) {
  PropertyAnnotation ann;
  ann.property_name = name;
  ann.side = side;
  for (const auto& [k, v] : d) ann.labels[{k.first, k.second}] = v;
  return ann;
}

LabelDict from_annotation(const PropertyAnnotation& ann) {
  LabelDict d;
  for (const auto& [k, v] : ann.labels) d[{k.sentence, k.token}] = v;
  return d;
}

py::list curve_points(const std::vector<CurvePoint>& points) {
  py::list out;
  for (const auto& p : points) out.append(py::make_tuple(p.k, p.fraction, p.score));
  return out;
}

py::dict curve_dict(const ErasureCurve& c) {
  py::dict d;
  d["scorer"] = c.scorer;
  d["model"] = c.model_id;
  d["dimension"] = c.dimension;
  d["top"] = curve_points(c.top);
  d["bottom"] = curve_points(c.bottom);
  return d;
}

Scorer make_scorer(std::optional<Eigen::MatrixXd> targets, std::optional<double> constant) {
  if (targets && constant) throw ValidationError(ValidationError::Code::kInvalidArgument, "pass targets or constant, not both");
  if (targets) return linear_probe_scorer(*targets);
  return constant_scorer(constant.value_or(0.0));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Neuron ranking, erasure, probing and control over activation dumps";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<ScorerError>(m, "ScorerError", base.ptr());

  m.def("set_thread_count", &set_thread_count, py::arg("threads"));

  // --- data ---------------------------------------------------------------------

  py::class_<ActivationDataset, std::shared_ptr<ActivationDataset>>(m, "Dataset")
      .def(py::init([](std::vector<std::vector<std::string>> sentences,
                       const std::vector<std::pair<std::string, ActivationMatrix>>& models) {
             std::vector<ModelRecord> records;
             for (const auto& [id, x] : models) records.push_back(make_model_record(id, x));
             return std::make_shared<ActivationDataset>(TokenCorpus(std::move(sentences)), std::move(records));
           }),
           py::arg("sentences"), py::arg("models"),
           "Build from tokenized sentences and (model id, T x D float32 array) pairs.")
      .def_property_readonly("model_ids",
                             [](const ActivationDataset& ds) {
                               std::vector<std::string> ids;
                               for (const auto& r : ds.models()) ids.push_back(r.model_id);
                               return ids;
                             })
      .def_property_readonly("num_tokens", &ActivationDataset::num_tokens)
      .def_property_readonly("corpus_id", &ActivationDataset::corpus_id)
      .def_property_readonly("sentences", [](const ActivationDataset& ds) { return ds.corpus().sentences(); })
      .def("activations", [](const ActivationDataset& ds, const std::string& model) { return ds.model(model).activations; },
           py::arg("model"))
      .def("__repr__", [](const ActivationDataset& ds) {
        return "<Dataset " + std::to_string(ds.num_models()) + " models, " + std::to_string(ds.num_tokens()) +
               " tokens>";
      });

  m.def("load_dataset", [](const std::filesystem::path& p) { return std::make_shared<ActivationDataset>(load_dataset(p)); },
        py::arg("path"));
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("dataset"));

  // --- numerics -------------------------------------------------------------------

  m.def("pearson", py::overload_cast<const Eigen::VectorXd&, const Eigen::VectorXd&>(&pearson), py::arg("x"),
        py::arg("y"));
  m.def("correlation_matrix", &correlation_matrix, py::arg("a"), py::arg("b"));

  // --- ranking --------------------------------------------------------------------

  py::class_<NeuronRanking>(m, "Ranking")
      .def_readonly("model", &NeuronRanking::model_id)
      .def_property_readonly("method", [](const NeuronRanking& r) { return std::string(to_string(r.method)); })
      .def_property_readonly("units", &NeuronRanking::order)
      .def_property_readonly("scores",
                             [](const NeuronRanking& r) {
                               std::vector<double> s;
                               for (const auto& e : r.entries) s.push_back(e.score);
                               return s;
                             })
      .def_readonly("flagged", &NeuronRanking::flagged_units)
      .def_readonly("warnings", &NeuronRanking::warnings)
      .def("rank_of", &NeuronRanking::rank_of, py::arg("unit"))
      .def("scores_by_unit", &NeuronRanking::scores_by_unit)
      .def("to_json", [](const NeuronRanking& r) { return ranking_to_json(r); })
      .def_static("from_json", &ranking_from_json, py::arg("text"))
      .def("__len__", &NeuronRanking::size);

  m.def(
      "rank",
      [](const ActivationDataset& ds, const std::string& model, const std::string& method, std::optional<std::string> other,
         std::optional<double> lam, bool normalize, double variance_fraction) {
        switch (parse_rank_method(method)) {
          case RankMethod::kMaxCorr: return rank_maxcorr(ds, model);
          case RankMethod::kMinCorr: return rank_mincorr(ds, model);
          case RankMethod::kLinReg: return rank_linreg(ds, model, {lam, normalize});
          case RankMethod::kSvcca: break;
        }
        std::string pair = other.value_or("");
        for (const auto& r : ds.models())
          if (pair.empty() && r.model_id != model) pair = r.model_id;
        auto ranking = rank_svcca(ds, model, pair, {variance_fraction, std::nullopt}).as_ranking(ds.corpus_id());
        ranking.params["variance_fraction"] = variance_fraction;
        return ranking;
      },
      py::arg("dataset"), py::arg("model"), py::arg("method") = "maxcorr", py::arg("other") = py::none(),
      py::arg("lam") = py::none(), py::arg("normalize") = true, py::arg("variance_fraction") = 0.99);
  m.def("precision_at_k", &precision_at_k, py::arg("ranking"), py::arg("expected"), py::arg("k"));

  // --- erasure --------------------------------------------------------------------

  m.def(
      "erasure_curve",
      [](const ActivationDataset& ds, const std::string& model, const NeuronRanking& ranking, const std::string& ks,
         std::optional<Eigen::MatrixXd> targets, std::optional<double> constant) {
        return curve_dict(erasure_curve(ds, model, ranking, parse_ks(ks), make_scorer(std::move(targets), constant)));
      },
      py::arg("dataset"), py::arg("model"), py::arg("ranking"), py::arg("ks") = "0,1%,5%,10%,25%,50%",
      py::arg("targets") = py::none(), py::arg("constant") = py::none(),
      "Scores with a linear probe onto `targets` (T x L), or a constant.");

  // --- probes ---------------------------------------------------------------------

  m.def(
      "explained_variance",
      [](const std::vector<double>& values, const std::vector<std::size_t>& groups) {
        return explained_variance(values, groups).fraction;
      },
      py::arg("values"), py::arg("groups"));
  m.def(
      "neuron_variance",
      [](const ActivationDataset& ds, const std::string& model, std::size_t neuron, const std::string& grouping) {
        const Grouping g = grouping == "token" ? Grouping::kToken : Grouping::kPosition;
        if (grouping != "token" && grouping != "position")
          throw ValidationError(ValidationError::Code::kInvalidArgument, "grouping must be position or token");
        return explained_variance(ds, model, neuron, g).fraction;
      },
      py::arg("dataset"), py::arg("model"), py::arg("neuron"), py::arg("grouping") = "position");
  m.def(
      "leaderboard",
      [](const ActivationDataset& ds, const std::string& model, const LabelDict& labels, const std::string& metric,
         bool in_sample) {
        ProbeOptions opts;
        opts.metric = metric;
        opts.split = in_sample ? SplitMode::kInSample : SplitMode::kEvenOdd;
        const auto report = neuron_leaderboard(ds, model, to_annotation(labels, "property", Side::kSource), opts);
        py::list out;
        for (const auto& e : report.entries) {
          py::dict row;
          row["neuron"] = e.neuron;
          row["metric"] = e.metric;
          row["accuracy"] = e.accuracy;
          py::dict f1;
          for (const auto& c : e.classes)
            if (c.f1) f1[py::str(c.label)] = *c.f1;
          row["f1"] = f1;
          out.append(row);
        }
        return out;
      },
      py::arg("dataset"), py::arg("model"), py::arg("labels"), py::arg("metric") = "macro-f1",
      py::arg("in_sample") = false, "labels: {(sentence, token): label}. Returns entries best first.");

  // --- synthetic data ---------------------------------------------------------------

  m.def(
      "generate",
      [](const std::string& spec_json) {
        auto result = generate(parse_synth_spec(spec_json));
        py::dict truth;
        truth["latents"] = result.truth.latents;
        truth["latent_names"] = result.truth.latent_names;
        py::dict annotations;
        for (const auto& ann : result.truth.annotations) annotations[py::str(ann.property_name)] = from_annotation(ann);
        truth["annotations"] = annotations;
        py::dict expected;
        for (const auto& [model, sets] : oracle_rankings(result.truth)) {
          py::dict s;
          s["maxcorr"] = sets.maxcorr;
          s["mincorr"] = sets.mincorr;
          s["linreg"] = sets.linreg;
          expected[py::str(model)] = s;
        }
        truth["expected_top"] = expected;
        return py::make_tuple(std::make_shared<ActivationDataset>(std::move(result.dataset)), truth);
      },
      py::arg("spec_json"), "Returns (Dataset, truth dict) for a JSON synth spec.");

  // --- control ------------------------------------------------------------------------

  py::class_<ControlPlan>(m, "ControlPlan")
      .def_readonly("property", &ControlPlan::property)
      .def_readonly("from_label", &ControlPlan::from)
      .def_readonly("to_label", &ControlPlan::to)
      .def_readonly("beta", &ControlPlan::beta)
      .def_property_readonly("neurons",
                             [](const ControlPlan& p) {
                               py::list out;
                               for (const auto& n : p.neurons) {
                                 py::dict d;
                                 d["id"] = n.id;
                                 d["mu1"] = n.mu1;
                                 d["mu2"] = n.mu2;
                                 d["alpha"] = n.alpha;
                                 out.append(d);
                               }
                               return out;
                             })
      .def_property_readonly("positions",
                             [](const ControlPlan& p) {
                               std::vector<std::pair<std::size_t, std::size_t>> out;
                               for (const auto& t : p.positions) out.emplace_back(t.sentence, t.token);
                               return out;
                             })
      .def("to_json", [](const ControlPlan& p) { return plan_to_json(p); })
      .def_static("from_json", &plan_from_json, py::arg("text"));

  py::class_<SuccessReport>(m, "SuccessReport")
      .def_readonly("to_count", &SuccessReport::to_count)
      .def_readonly("from_count", &SuccessReport::from_count)
      .def_readonly("both", &SuccessReport::both)
      .def_readonly("neither", &SuccessReport::neither)
      .def_readonly("missing_alignment", &SuccessReport::missing_alignment)
      .def_property_readonly("total", &SuccessReport::total)
      .def_property_readonly("rate", &SuccessReport::rate)
      .def("percent", &SuccessReport::percent, py::arg("decimals") = 0);

  m.def("compute_alpha", &compute_alpha, py::arg("mu1"), py::arg("mu2"), py::arg("beta"));
  m.def(
      "make_plan",
      [](const ActivationDataset& ds, const std::string& model, const LabelDict& labels, const std::string& property,
         const std::string& from, const std::string& to, const std::vector<std::size_t>& neurons, double beta) {
        return make_plan(ds, model, to_labels(labels), property, from, to, neurons, beta);
      },
      py::arg("dataset"), py::arg("model"), py::arg("labels"), py::arg("property"), py::arg("from_label"),
      py::arg("to_label"), py::arg("neurons"), py::arg("beta"));
  m.def(
      "apply_control",
      [](const ActivationDataset& ds, const std::string& model, const ControlPlan& plan) {
        return apply_control(ds.model(model).activations, ds.corpus(), plan);
      },
      py::arg("dataset"), py::arg("model"), py::arg("plan"));
  m.def(
      "score_success",
      [](const LabelDict& tags, const std::vector<std::vector<std::pair<std::size_t, std::size_t>>>& alignments,
         const ControlPlan& plan) {
        AlignmentSet a;
        a.links = alignments;
        return score_success(to_annotation(tags, plan.property, Side::kTarget), a, plan);
      },
      py::arg("tags"), py::arg("alignments"), py::arg("plan"),
      "tags: {(sentence, output index): label}; alignments: per sentence, (source, output) links.");
  m.def(
      "threshold_decode",
      [](const ActivationDataset& ds, const std::string& model, const ControlPlan& plan, std::size_t neuron,
         double threshold, const std::string& above, const std::string& below) {
        const auto out = synthetic_decoder_roundtrip(ds, model, plan, {neuron, threshold, above, below});
        return py::make_tuple(from_annotation(out.tags), out.alignments.links);
      },
      py::arg("dataset"), py::arg("model"), py::arg("plan"), py::arg("neuron"), py::arg("threshold"),
      py::arg("above"), py::arg("below"), "Applies the plan, then tags every token by a threshold on one neuron.");

  // --- visualisation ------------------------------------------------------------------

  m.def(
      "render_heatmap",
      [](const ActivationDataset& ds, const std::string& model, std::size_t neuron, std::size_t first,
         std::size_t end, const std::string& format) {
        if (format != "html" && format != "ansi")
          throw ValidationError(ValidationError::Code::kInvalidArgument, "format must be html or ansi");
        return render_heatmap(build_heatmap(ds, model, neuron, first, end),
                              format == "html" ? HeatmapFormat::kHtml : HeatmapFormat::kAnsi);
      },
      py::arg("dataset"), py::arg("model"), py::arg("neuron"), py::arg("first") = 0, py::arg("end") = 10,
      py::arg("format") = "html");
}
