// neuron-cartographer: rank, erase, probe, control and visualize neurons
// across activation dumps of several models.

#include "ncart/ncart.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace ncart;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

/// JSON config files: top-level keys set global options, nested objects set
/// options of the subcommand with that name. Flags given on the command line win.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const nlohmann::json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(ValidationError::Code::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes the report and a mirror in the other format next to it.
void write_with_mirror(const fs::path& out, const std::string& json, const std::string& csv) {
  const auto ext = out.extension().string();
  if (ext == ".csv") {
    write_file_atomic(out, csv);
    write_file_atomic(fs::path(out).replace_extension(".json"), json);
  } else {
    write_file_atomic(out, json);
    write_file_atomic(fs::path(out).replace_extension(".csv"), csv);
  }
}

std::vector<std::size_t> parse_ids(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& spec : parse_ks(text)) {
    if (spec.percent || spec.value != static_cast<double>(static_cast<std::size_t>(spec.value)))
      throw ValidationError(ValidationError::Code::kParse, "expected a comma-separated list of neuron ids");
    out.push_back(static_cast<std::size_t>(spec.value));
  }
  return out;
}

struct Globals {
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

Eigen::MatrixXd load_latents(const fs::path& data_dir, std::size_t tokens) {
  const auto truth_path = (fs::is_directory(data_dir) ? data_dir : data_dir.parent_path()) / "truth.json";
  nlohmann::json truth;
  try {
    truth = nlohmann::json::parse(read_file(truth_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(ValidationError::Code::kParse, truth_path.string() + ": " + e.what());
  }
  const auto file = truth.at("latents").at("file").get<std::string>();
  const auto cols = truth.at("latents").at("columns").size();
  if (file.empty() || cols == 0)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "dataset has no planted latents for probe:latent");
  return load_activations(truth_path.parent_path() / file, tokens, cols, "latents").cast<double>();
}

Scorer make_scorer(const std::string& spec, const ActivationDataset& ds, const std::string& model,
                   const Globals& g) {
  if (spec == "constant") return constant_scorer(1.0);
  if (spec.rfind("constant:", 0) == 0) return constant_scorer(std::stod(spec.substr(9)));
  if (spec == "probe:latent" || spec.rfind("probe:latent:", 0) == 0) {
    Eigen::MatrixXd latents = load_latents(g.data, ds.num_tokens());
    if (spec.size() > 13) {
      const auto col = std::stoul(spec.substr(13));
      if (col >= static_cast<std::size_t>(latents.cols()))
        throw ValidationError(ValidationError::Code::kOutOfBounds, "latent column " + std::to_string(col) + " out of range");
      latents = Eigen::MatrixXd(latents.col(static_cast<Eigen::Index>(col)));
    }
    return linear_probe_scorer(std::move(latents), spec);
  }
  if (spec.rfind("decoder:", 0) == 0) {
    const auto target = spec.substr(8);
    return ridge_decoder_scorer(ds.model(model).activations, ds.model(target).to_double(), spec);
  }
  throw ValidationError(ValidationError::Code::kInvalidArgument, "unknown scorer '" + spec +
                                                                     "' (constant[:v], probe:latent[:i], decoder:<model>)");
}

Grouping parse_grouping(const std::string& name) {
  if (name == "position") return Grouping::kPosition;
  if (name == "token") return Grouping::kToken;
  if (name == "annotation") return Grouping::kAnnotation;
  throw ValidationError(ValidationError::Code::kInvalidArgument, "grouping must be position, token or annotation");
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(ValidationError::Code::kInvalidArgument, std::string(flag) + " is required");
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Discover, verify and manipulate important neurons across models' activation dumps."};
  app.name("neuron-cartographer");
  app.fallthrough();
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (command-line flags take precedence)");

  Globals g;
  app.add_option("--data", g.data, "Dataset directory or manifest.json");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--seed", g.seed, "Random seed (synth: overrides the spec seed)");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores); env NEURON_CARTOGRAPHER_THREADS");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted ground truth");
  std::string spec_path;
  synth->add_option("--spec", spec_path, "Synthetic spec JSON")->required();

  // rank
  auto* rank = app.add_subcommand("rank", "Rank a model's neurons (maxcorr, mincorr, linreg) or directions (svcca)");
  std::string model, method = "maxcorr", other;
  std::optional<double> lambda, epsilon;
  double fraction = 0.99;
  bool raw_mse = false;
  rank->add_option("--model", model, "Model id")->required();
  rank->add_option("--method", method, "maxcorr | mincorr | linreg | svcca")
      ->check(CLI::IsMember({"maxcorr", "mincorr", "linreg", "svcca"}));
  rank->add_option("--other", other, "svcca: the other model of the pair (default: first other model)");
  rank->add_option("--lambda", lambda, "linreg: ridge penalty (default 1e-3 * trace(Gram)/D)");
  rank->add_flag("--raw-mse", raw_mse, "linreg: rank by raw MSE instead of variance-normalized MSE");
  rank->add_option("--fraction", fraction, "svcca: PCA variance fraction to retain")->check(CLI::Range(1e-12, 1.0));
  rank->add_option("--epsilon", epsilon, "svcca: CCA covariance regularizer (default 1e-8 * mean diagonal)");

  // erase
  auto* erase = app.add_subcommand("erase", "Erasure curves from the top and bottom of a ranking");
  std::string ranking_path, ks_text = "0,1%,5%,10%,25%,50%", scorer_spec = "probe:latent";
  erase->add_option("--model", model, "Model id (default: the ranking's model)");
  erase->add_option("--ranking", ranking_path, "Ranking JSON from `rank`")->required();
  erase->add_option("--ks", ks_text, "Comma-separated counts, or percentages of D with a % suffix");
  erase->add_option("--scorer", scorer_spec, "constant[:v] | probe:latent[:i] | decoder:<model>");

  // probe
  auto* probe = app.add_subcommand("probe", "Supervised verification of neurons");
  probe->require_subcommand(1);
  auto* leaderboard = probe->add_subcommand("leaderboard", "Per-neuron Gaussian class probe for a property");
  auto* variance_cmd = probe->add_subcommand("variance", "Variance explained by position, token or annotation");
  std::string annotation_path, metric = "macro-f1", grouping = "position";
  bool in_sample = false;
  std::size_t neuron = 0, components = 1;
  for (auto* sub : {leaderboard, variance_cmd}) sub->add_option("--model", model, "Model id")->required();
  leaderboard->add_option("--annotation", annotation_path, "Property TSV (sentence, token, label)")->required();
  leaderboard->add_option("--metric", metric, "macro-f1 | accuracy | f1:<label>");
  leaderboard->add_flag("--in-sample", in_sample, "Fit and evaluate on all tokens instead of even/odd sentences");
  leaderboard->add_option("--components", components, "Gaussian components per class")->check(CLI::PositiveNumber);
  variance_cmd->add_option("--neuron", neuron, "Neuron id")->required();
  variance_cmd->add_option("--grouping", grouping, "position | token | annotation")
      ->check(CLI::IsMember({"position", "token", "annotation"}));
  variance_cmd->add_option("--annotation", annotation_path, "Property TSV for annotation grouping");

  // control
  auto* control = app.add_subcommand("control", "Translation-control protocol");
  control->require_subcommand(1);
  auto* find = control->add_subcommand("find-neurons", "Rank neurons by predictiveness of an aligned target property");
  auto* plan_cmd = control->add_subcommand("plan", "Build a control plan: alpha = mu1 + beta (mu1 - mu2)");
  auto* apply = control->add_subcommand("apply", "Write a dataset copy with the plan applied");
  auto* score = control->add_subcommand("score", "Score success from output tags and alignments");
  auto* decode = control->add_subcommand("decode", "Synthetic threshold decoder producing output tags/alignments");
  std::string target_annotation, source_annotation, alignments_path, target_corpus, from, to, neurons_text,
      plan_path, tags_path, output_corpus, above, below, property = "property";
  double beta = 0.0, threshold = 0.0;
  std::size_t top_k = 1;
  for (auto* sub : {find, plan_cmd}) {
    sub->add_option("--model", model, "Model id")->required();
    sub->add_option("--target-annotation", target_annotation, "Target-side property TSV")->required();
    sub->add_option("--alignments", alignments_path, "Pharaoh alignments, source-target")->required();
    sub->add_option("--target-corpus", target_corpus, "Target tokens (default: the source corpus)");
    sub->add_option("--source-annotation", source_annotation, "Restrict to source tokens annotated here");
    sub->add_option("--metric", metric, "macro-f1 | accuracy | f1:<label>");
  }
  plan_cmd->add_option("--from", from, "Label to modify from")->required();
  plan_cmd->add_option("--to", to, "Label to modify to")->required();
  plan_cmd->add_option("--beta", beta, "Modification strength (use --beta=-1 for negatives)");
  plan_cmd->add_option("--neurons", neurons_text, "Explicit neuron ids (default: top-k from find-neurons)");
  plan_cmd->add_option("--top-k", top_k, "Number of most predictive neurons")->check(CLI::PositiveNumber);
  apply->add_option("--model", model, "Model id")->required();
  apply->add_option("--plan", plan_path, "Plan JSON")->required();
  score->add_option("--plan", plan_path, "Plan JSON")->required();
  score->add_option("--tags", tags_path, "Output-side property TSV")->required();
  score->add_option("--alignments", alignments_path, "Source-output alignments")->required();
  score->add_option("--output-corpus", output_corpus, "Output tokens file")->required();
  decode->add_option("--model", model, "Model id")->required();
  decode->add_option("--neuron", neuron, "Neuron the decoder reads")->required();
  decode->add_option("--threshold", threshold, "Emit --above when activation > threshold")->required();
  decode->add_option("--above", above, "Label above the threshold")->required();
  decode->add_option("--below", below, "Label at or below the threshold")->required();
  decode->add_option("--plan", plan_path, "Apply this plan before decoding");
  decode->add_option("--property", property, "Property name for the emitted tags");

  // viz
  auto* viz = app.add_subcommand("viz", "Render one neuron's activations as an HTML or ANSI heatmap");
  std::string sentences = "0:10", format = "html";
  viz->add_option("--model", model, "Model id")->required();
  viz->add_option("--neuron", neuron, "Neuron id")->required();
  viz->add_option("--sentences", sentences, "Sentence range begin:end (end exclusive)");
  viz->add_option("--format", format, "html | ansi")->check(CLI::IsMember({"html", "ansi"}));

  const std::string globals_help =
      "\nGlobal options (accepted before or after the subcommand):\n"
      "  --data PATH      Dataset directory or manifest.json\n"
      "  --out PATH       Output file or directory\n"
      "  --seed N         Random seed (synth)\n"
      "  --threads N      Worker threads, 0 = all cores (env NEURON_CARTOGRAPHER_THREADS)\n"
      "  --config FILE    JSON config; nested objects configure subcommands, flags win\n"
      "Exit codes: 0 success, 1 validation or usage error, 2 numerical failure.";
  for (auto* sub : {synth, rank, erase, probe, leaderboard, variance_cmd, control, find, plan_cmd, apply, score, decode, viz})
    sub->footer(globals_help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* active = &app;
    for (auto* sub : app.get_subcommands()) {
      active = sub;
      for (auto* nested : sub->get_subcommands()) active = nested;
    }
    std::cerr << active->help();
    return kExitValidation;
  }

  try {
    if (g.threads) {
      set_thread_count(*g.threads);
    } else if (const char* env = std::getenv("NEURON_CARTOGRAPHER_THREADS")) {
      set_thread_count(static_cast<std::size_t>(std::strtoul(env, nullptr, 10)));
    } else {
      set_thread_count(0);
    }

    if (synth->parsed()) {
      require(g.out, "--out");
      auto spec = load_synth_spec(spec_path);
      if (g.seed) spec.seed = *g.seed;
      write_synth_output(g.out, generate(spec));
      std::cout << "wrote synthetic dataset to " << g.out << "\n";
      return kExitOk;
    }

    require(g.data, "--data");
    const auto ds = load_dataset(g.data);

    if (rank->parsed()) {
      require(g.out, "--out");
      NeuronRanking ranking;
      if (method == "svcca") {
        if (other.empty()) {
          for (const auto& m : ds.models())
            if (m.model_id != model) {
              other = m.model_id;
              break;
            }
          if (other.empty()) other = model;
        }
        const auto dirs = rank_svcca(ds, model, other, {fraction, epsilon});
        ranking = dirs.as_ranking(ds.corpus_id());
        ranking.params["variance_fraction"] = fraction;
      } else if (method == "linreg") {
        ranking = rank_linreg(ds, model, {lambda, !raw_mse});
      } else if (method == "mincorr") {
        ranking = rank_mincorr(ds, model);
      } else {
        ranking = rank_maxcorr(ds, model);
      }
      for (const auto& w : ranking.warnings) std::cerr << "warning: " << w << "\n";
      write_with_mirror(g.out, ranking_to_json(ranking), ranking_to_csv(ranking));
      return kExitOk;
    }

    if (erase->parsed()) {
      require(g.out, "--out");
      const auto ranking = ranking_from_json(read_file(ranking_path));
      if (model.empty()) model = ranking.model_id;
      if (model != ranking.model_id)
        throw ValidationError(ValidationError::Code::kInvalidArgument, "ranking was computed for model '" +
                                                                           ranking.model_id + "'");
      const auto scorer = make_scorer(scorer_spec, ds, model, g);
      const auto ks = parse_ks(ks_text);
      ErasureCurve curve;
      if (ranking.method == RankMethod::kSvcca) {
        const auto frac = ranking.params.count("variance_fraction") ? ranking.params.at("variance_fraction") : 0.99;
        const auto pair_model = ranking.other_models.empty() ? model : ranking.other_models.front();
        curve = svcca_erasure_curve(ds, rank_svcca(ds, model, pair_model, {frac, std::nullopt}), ks, scorer);
      } else {
        curve = erasure_curve(ds, model, ranking, ks, scorer);
      }
      write_with_mirror(g.out, curve_to_json(curve, scorer.higher_is_better), curve_to_csv(curve));
      return kExitOk;
    }

    if (leaderboard->parsed()) {
      require(g.out, "--out");
      const auto ann = load_annotation(annotation_path, ds.corpus());
      ProbeOptions opts;
      opts.metric = metric;
      opts.split = in_sample ? SplitMode::kInSample : SplitMode::kEvenOdd;
      opts.gmm.components_per_class = components;
      std::vector<NeuronRanking> rankings;
      if (ds.num_models() >= 2) {
        rankings.push_back(rank_maxcorr(ds, model));
        rankings.push_back(rank_mincorr(ds, model));
        rankings.push_back(rank_linreg(ds, model));
      }
      const auto report = neuron_leaderboard(ds, model, ann, opts, rankings);
      write_with_mirror(g.out, leaderboard_to_json(report), leaderboard_to_csv(report));
      return kExitOk;
    }

    if (variance_cmd->parsed()) {
      require(g.out, "--out");
      std::optional<PropertyAnnotation> ann;
      if (!annotation_path.empty()) ann = load_annotation(annotation_path, ds.corpus());
      const auto ev = explained_variance(ds, model, neuron, parse_grouping(grouping), ann ? &*ann : nullptr);
      write_file_atomic(g.out, variance_to_json(model, neuron, grouping, ev));
      return kExitOk;
    }

    if (find->parsed() || plan_cmd->parsed()) {
      require(g.out, "--out");
      const TokenCorpus tgt_corpus = target_corpus.empty() ? ds.corpus() : load_corpus(target_corpus);
      const auto tgt_ann = load_annotation(target_annotation, tgt_corpus, std::nullopt, Side::kTarget);
      const auto links = load_alignments(alignments_path, ds.corpus(), tgt_corpus);
      std::optional<PropertyAnnotation> src_ann;
      if (!source_annotation.empty()) src_ann = load_annotation(source_annotation, ds.corpus());
      ProbeOptions opts;
      opts.metric = metric;
      if (find->parsed()) {
        const auto result = target_predictive_neurons(ds, model, src_ann ? &*src_ann : nullptr, tgt_ann, links, opts);
        write_file_atomic(g.out, target_neurons_to_json(model, result, metric));
        return kExitOk;
      }
      std::vector<std::size_t> ids;
      if (!neurons_text.empty()) {
        ids = parse_ids(neurons_text);
      } else {
        const auto result = target_predictive_neurons(ds, model, src_ann ? &*src_ann : nullptr, tgt_ann, links, opts);
        for (std::size_t i = 0; i < std::min(top_k, result.entries.size()); ++i) ids.push_back(result.entries[i].neuron);
      }
      const auto projected = project_target_labels(ds.corpus(), tgt_ann, links, src_ann ? &*src_ann : nullptr);
      const auto plan = make_plan(ds, model, projected.labels, tgt_ann.property_name, from, to, ids, beta);
      write_file_atomic(g.out, plan_to_json(plan));
      return kExitOk;
    }

    if (apply->parsed()) {
      require(g.out, "--out");
      const auto plan = plan_from_json(read_file(plan_path));
      std::vector<ModelRecord> models;
      for (const auto& m : ds.models()) {
        if (m.model_id == model) {
          models.push_back(make_model_record(m.model_id, apply_control(m.activations, ds.corpus(), plan)));
        } else {
          models.push_back(m);
        }
      }
      write_dataset(g.out, ActivationDataset(ds.corpus(), std::move(models)));
      return kExitOk;
    }

    if (score->parsed()) {
      require(g.out, "--out");
      const auto plan = plan_from_json(read_file(plan_path));
      plan.validate(ds.corpus(), std::numeric_limits<std::size_t>::max());
      const auto out_corpus = load_corpus(output_corpus);
      const auto tags = load_annotation(tags_path, out_corpus, plan.property, Side::kTarget);
      const auto links = load_alignments(alignments_path, ds.corpus(), out_corpus);
      const auto report = score_success(tags, links, plan);
      if (report.missing_alignment)
        std::cerr << "warning: " << report.missing_alignment << " modified tokens have no alignment link\n";
      write_file_atomic(g.out, success_to_json(report));
      return kExitOk;
    }

    if (decode->parsed()) {
      require(g.out, "--out");
      ActivationMatrix x = ds.model(model).activations;
      if (!plan_path.empty()) {
        const auto plan = plan_from_json(read_file(plan_path));
        x = apply_control(x, ds.corpus(), plan);
        property = plan.property;
      }
      const auto decoded = synthetic_decoder_roundtrip(x, ds.corpus(), {neuron, threshold, above, below}, property);
      const fs::path dir = g.out;
      write_file_atomic(dir / "output_tokens.txt", serialize_corpus(decoded.tokens));
      write_file_atomic(dir / "tags.tsv", serialize_annotation(decoded.tags));
      write_file_atomic(dir / "alignments.txt", serialize_alignments(decoded.alignments));
      return kExitOk;
    }

    if (viz->parsed()) {
      require(g.out, "--out");
      const auto colon = sentences.find(':');
      if (colon == std::string::npos)
        throw ValidationError(ValidationError::Code::kParse, "--sentences expects begin:end");
      const auto ids = parse_ids(sentences.substr(0, colon) + "," + sentences.substr(colon + 1));
      const auto doc = build_heatmap(ds, model, neuron, ids[0], ids[1]);
      write_file_atomic(g.out, render_heatmap(doc, format == "html" ? HeatmapFormat::kHtml : HeatmapFormat::kAnsi));
      return kExitOk;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ScorerError& e) {
    std::cerr << "scorer error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

int main(int argc, char** argv) { return run(argc, argv); }
