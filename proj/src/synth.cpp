#include "ncart/synth.hpp"

#include "ncart/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace ncart {

using Code = ValidationError::Code;
using Kind = PlantedFeature::Kind;

// --- PRNG --------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Xoshiro256::Xoshiro256(std::uint64_t seed) {
  for (auto& s : s_) s = splitmix64(seed);
}

std::uint64_t Xoshiro256::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Xoshiro256::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::uint64_t Xoshiro256::below(std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
}

double Xoshiro256::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

// --- spec ----------------------------------------------------------------------

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::kSharedLatent: return "shared-latent";
    case Kind::kPosition: return "position";
    case Kind::kTokenIdentity: return "token-identity";
    case Kind::kDistributed: return "distributed";
    case Kind::kLabeledProperty: return "labeled-property";
  }
  return "unknown";
}

void SynthSpec::validate() const {
  if (models.empty()) throw ValidationError(Code::kInvalidArgument, "synth: no models");
  std::map<std::string, std::size_t> width;
  for (const auto& m : models) {
    if (m.id.empty() || m.neurons == 0)
      throw ValidationError(Code::kInvalidArgument, "synth: models need an id and a positive neuron count");
    if (!width.emplace(m.id, m.neurons).second)
      throw ValidationError(Code::kDuplicate, "synth: duplicate model id '" + m.id + "'");
  }
  if (corpus.sentences == 0 || corpus.min_length == 0 || corpus.max_length < corpus.min_length ||
      corpus.vocabulary == 0)
    throw ValidationError(Code::kInvalidArgument, "synth: invalid corpus shape");
  if (!(noise_sigma > 0.0)) throw ValidationError(Code::kInvalidArgument, "synth: noise_sigma must be > 0");

  std::map<std::string, std::set<std::size_t>> used;
  std::map<std::string, std::set<std::size_t>> distributed_targets;
  for (std::size_t f = 0; f < features.size(); ++f) {
    const auto& feat = features[f];
    const auto where = "synth feature " + std::to_string(f) + " (" + std::string(to_string(feat.kind)) + ")";
    if (!(feat.sigma > 0.0)) throw ValidationError(Code::kInvalidArgument, where + ": sigma must be > 0");
    if (feat.neurons.empty()) throw ValidationError(Code::kInvalidArgument, where + ": no target neurons");
    std::size_t list_size = feat.neurons.begin()->second.size();
    for (const auto& [model, ids] : feat.neurons) {
      if (!width.count(model)) throw ValidationError(Code::kInvalidArgument, where + ": unknown model '" + model + "'");
      if (feat.kind == Kind::kSharedLatent && ids.size() != list_size)
        throw ValidationError(Code::kInvalidArgument, where + ": every model needs the same number of latent neurons");
      for (auto id : ids) {
        if (id >= width[model])
          throw ValidationError(Code::kOutOfBounds, where + ": neuron " + std::to_string(id) + " outside '" + model + "'");
        if (!used[model].insert(id).second)
          throw ValidationError(Code::kDuplicate, where + ": neuron " + std::to_string(id) + " of '" + model +
                                                      "' is planted twice");
        if (feat.kind == Kind::kDistributed) distributed_targets[model].insert(id);
      }
    }
    if (feat.kind == Kind::kDistributed) {
      if (!width.count(feat.source_model))
        throw ValidationError(Code::kInvalidArgument, where + ": unknown source model '" + feat.source_model + "'");
      if (feat.sources.empty() || feat.sources.size() != feat.weights.size())
        throw ValidationError(Code::kInvalidArgument, where + ": sources and weights must be non-empty and aligned");
      for (auto s : feat.sources)
        if (s >= width[feat.source_model])
          throw ValidationError(Code::kOutOfBounds, where + ": source neuron " + std::to_string(s) + " out of range");
    }
    if (feat.kind == Kind::kLabeledProperty) {
      if (feat.name.empty()) throw ValidationError(Code::kInvalidArgument, where + ": property needs a name");
      if (feat.labels.size() < 2 || feat.labels.size() != feat.means.size())
        throw ValidationError(Code::kInvalidArgument, where + ": need >= 2 labels with one mean each");
      if (feat.assignment == "parens") {
        if (feat.labels.size() != 2)
          throw ValidationError(Code::kInvalidArgument, where + ": parens assignment takes {inside, outside} labels");
      } else if (feat.assignment == "random") {
        if (!feat.probabilities.empty()) {
          double sum = 0.0;
          for (double p : feat.probabilities) sum += p;
          if (feat.probabilities.size() != feat.labels.size() || std::abs(sum - 1.0) > 1e-9)
            throw ValidationError(Code::kInvalidArgument, where + ": probabilities must match labels and sum to 1");
        }
        if (!(feat.coverage > 0.0 && feat.coverage <= 1.0))
          throw ValidationError(Code::kInvalidArgument, where + ": coverage must be in (0, 1]");
      } else {
        throw ValidationError(Code::kInvalidArgument, where + ": assignment must be random or parens");
      }
    }
  }
  for (const auto& feat : features) {
    if (feat.kind != Kind::kDistributed) continue;
    for (auto s : feat.sources)
      if (distributed_targets[feat.source_model].count(s))
        throw ValidationError(Code::kInvalidArgument, "synth: distributed sources cannot be distributed targets");
  }
}

namespace {

Kind parse_kind(const std::string& s) {
  if (s == "shared-latent") return Kind::kSharedLatent;
  if (s == "position") return Kind::kPosition;
  if (s == "token-identity") return Kind::kTokenIdentity;
  if (s == "distributed") return Kind::kDistributed;
  if (s == "labeled-property") return Kind::kLabeledProperty;
  throw ValidationError(Code::kInvalidArgument, "synth: unknown feature kind '" + s + "'");
}

}  // namespace

SynthSpec parse_synth_spec(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(Code::kParse, std::string("synth spec is not valid JSON: ") + e.what());
  }
  SynthSpec spec;
  try {
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.noise_sigma = j.value("noise_sigma", 1.0);
    if (j.contains("models")) {
      for (const auto& m : j.at("models")) spec.models.push_back({m.at("id").get<std::string>(), m.at("neurons").get<std::size_t>()});
    } else {
      const auto count = j.at("num_models").get<std::size_t>();
      const auto width = j.at("neurons").get<std::size_t>();
      for (std::size_t i = 0; i < count; ++i) spec.models.push_back({"m" + std::to_string(i + 1), width});
    }
    if (j.contains("corpus")) {
      const auto& c = j.at("corpus");
      spec.corpus.sentences = c.value("sentences", spec.corpus.sentences);
      spec.corpus.min_length = c.value("min_length", spec.corpus.min_length);
      spec.corpus.max_length = c.value("max_length", spec.corpus.max_length);
      spec.corpus.vocabulary = c.value("vocabulary", spec.corpus.vocabulary);
      spec.corpus.zipf_exponent = c.value("zipf_exponent", spec.corpus.zipf_exponent);
      spec.corpus.parens_probability = c.value("parens_probability", spec.corpus.parens_probability);
    }
    for (const auto& f : j.value("features", nlohmann::json::array())) {
      PlantedFeature feat;
      feat.kind = parse_kind(f.at("kind").get<std::string>());
      feat.sigma = f.value("sigma", 0.1);
      for (const auto& [model, ids] : f.at("neurons").items()) {
        if (ids.is_array()) {
          feat.neurons[model] = ids.get<std::vector<std::size_t>>();
        } else {
          feat.neurons[model] = {ids.get<std::size_t>()};
        }
      }
      feat.scale = f.value("scale", 1.0);
      feat.source_model = f.value("source_model", std::string{});
      feat.sources = f.value("sources", std::vector<std::size_t>{});
      feat.weights = f.value("weights", std::vector<double>{});
      feat.name = f.value("name", std::string{});
      feat.assignment = f.value("assignment", std::string("random"));
      feat.labels = f.value("labels", std::vector<std::string>{});
      feat.means = f.value("means", std::vector<double>{});
      feat.probabilities = f.value("probabilities", std::vector<double>{});
      feat.coverage = f.value("coverage", 1.0);
      const auto side = f.value("side", std::string("source"));
      if (side != "source" && side != "target")
        throw ValidationError(Code::kInvalidArgument, "synth: side must be source or target");
      feat.side = side == "target" ? Side::kTarget : Side::kSource;
      spec.features.push_back(std::move(feat));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(Code::kParse, std::string("synth spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(Code::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_synth_spec(ss.str());
}

// --- generation ----------------------------------------------------------------

namespace {

struct CorpusDraw {
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::vector<bool>> inside_parens;
  std::vector<std::vector<std::size_t>> types;  // index into type table
};

CorpusDraw draw_corpus(const SynthCorpus& shape, bool with_parens, Xoshiro256& rng) {
  std::vector<double> cdf(shape.vocabulary);
  double total = 0.0;
  for (std::size_t r = 0; r < shape.vocabulary; ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), shape.zipf_exponent);
    cdf[r] = total;
  }
  CorpusDraw out;
  const std::size_t open_type = shape.vocabulary, close_type = shape.vocabulary + 1;
  for (std::size_t s = 0; s < shape.sentences; ++s) {
    const auto len = shape.min_length + rng.below(shape.max_length - shape.min_length + 1);
    std::vector<std::size_t> types(len);
    for (auto& t : types) {
      const double u = rng.uniform() * total;
      t = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      t = std::min(t, shape.vocabulary - 1);
    }
    std::vector<bool> inside(len, false);
    if (with_parens && len >= 3 && rng.uniform() < shape.parens_probability) {
      const auto open = rng.below(len - 2);
      const auto close = open + 2 + rng.below(len - open - 2);
      types[open] = open_type;
      types[close] = close_type;
      for (auto k = open + 1; k < close; ++k) inside[k] = true;
    }
    std::vector<std::string> tokens;
    for (auto t : types)
      tokens.push_back(t == open_type ? "(" : t == close_type ? ")" : "w" + std::to_string(t));
    out.sentences.push_back(std::move(tokens));
    out.inside_parens.push_back(std::move(inside));
    out.types.push_back(std::move(types));
  }
  return out;
}

}  // namespace

SynthResult generate(const SynthSpec& spec) {
  spec.validate();
  Xoshiro256 rng(spec.seed);

  const bool with_parens = std::any_of(spec.features.begin(), spec.features.end(), [](const auto& f) {
    return f.kind == Kind::kLabeledProperty && f.assignment == "parens";
  });
  const CorpusDraw draw = draw_corpus(spec.corpus, with_parens, rng);
  TokenCorpus corpus(draw.sentences);
  const std::size_t t_total = corpus.num_tokens();
  const std::size_t num_types = spec.corpus.vocabulary + 2;

  std::vector<std::size_t> row_type, row_position;
  std::vector<bool> row_inside;
  for (std::size_t s = 0; s < draw.sentences.size(); ++s)
    for (std::size_t k = 0; k < draw.sentences[s].size(); ++k) {
      row_type.push_back(draw.types[s][k]);
      row_position.push_back(k);
      row_inside.push_back(draw.inside_parens[s][k]);
    }

  // Per-feature signals, drawn in feature order.
  std::vector<std::vector<double>> type_values(spec.features.size());
  std::vector<std::vector<int>> row_labels(spec.features.size());  // -1 = unannotated
  GroundTruth truth;
  truth.spec = spec;
  std::vector<std::vector<std::size_t>> latent_columns(spec.features.size());
  std::vector<Eigen::VectorXd> latent_list;

  for (std::size_t f = 0; f < spec.features.size(); ++f) {
    const auto& feat = spec.features[f];
    if (feat.kind == Kind::kTokenIdentity) {
      type_values[f].resize(num_types);
      for (auto& v : type_values[f]) v = rng.normal();
    }
  }
  for (std::size_t f = 0; f < spec.features.size(); ++f) {
    const auto& feat = spec.features[f];
    if (feat.kind != Kind::kSharedLatent) continue;
    const std::size_t count = feat.neurons.begin()->second.size();
    for (std::size_t j = 0; j < count; ++j) {
      Eigen::VectorXd z(static_cast<Eigen::Index>(t_total));
      for (std::size_t t = 0; t < t_total; ++t) z(static_cast<Eigen::Index>(t)) = rng.normal();
      latent_columns[f].push_back(latent_list.size());
      truth.latent_names.push_back("feature" + std::to_string(f) + ".latent" + std::to_string(j));
      latent_list.push_back(std::move(z));
    }
  }
  for (std::size_t f = 0; f < spec.features.size(); ++f) {
    const auto& feat = spec.features[f];
    if (feat.kind != Kind::kLabeledProperty) continue;
    auto& labels = row_labels[f];
    labels.assign(t_total, -1);
    PropertyAnnotation ann;
    ann.property_name = feat.name;
    ann.side = feat.side;
    for (std::size_t t = 0; t < t_total; ++t) {
      if (feat.assignment == "parens") {
        labels[t] = row_inside[t] ? 0 : 1;
      } else {
        if (feat.coverage < 1.0 && rng.uniform() >= feat.coverage) continue;
        const double u = rng.uniform();
        double acc = 0.0;
        int chosen = static_cast<int>(feat.labels.size()) - 1;
        for (std::size_t c = 0; c < feat.labels.size(); ++c) {
          acc += feat.probabilities.empty() ? 1.0 / static_cast<double>(feat.labels.size()) : feat.probabilities[c];
          if (u < acc) {
            chosen = static_cast<int>(c);
            break;
          }
        }
        labels[t] = chosen;
      }
      ann.labels.emplace(corpus.locate(t), feat.labels[static_cast<std::size_t>(labels[t])]);
    }
    truth.annotations.push_back(std::move(ann));
  }
  truth.latents.resize(static_cast<Eigen::Index>(t_total), static_cast<Eigen::Index>(latent_list.size()));
  for (std::size_t l = 0; l < latent_list.size(); ++l) truth.latents.col(static_cast<Eigen::Index>(l)) = latent_list[l];

  // Background noise for every model, row-major.
  std::map<std::string, ActivationMatrix> acts;
  for (const auto& m : spec.models) {
    ActivationMatrix x(static_cast<Eigen::Index>(t_total), static_cast<Eigen::Index>(m.neurons));
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = static_cast<float>(spec.noise_sigma * rng.normal());
    acts.emplace(m.id, std::move(x));
  }

  auto plant = [&](std::size_t f, const std::string& model, std::size_t neuron, std::size_t slot, auto&& signal) {
    const auto& feat = spec.features[f];
    auto& x = acts.at(model);
    for (std::size_t t = 0; t < t_total; ++t) {
      double value = 0.0;
      if (!signal(t, value)) continue;
      x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(neuron)) =
          static_cast<float>(value + feat.sigma * rng.normal());
    }
    truth.plants[model].push_back({f, feat.kind, neuron, slot});
  };

  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t f = 0; f < spec.features.size(); ++f) {
      const auto& feat = spec.features[f];
      if ((feat.kind == Kind::kDistributed) != (pass == 1)) continue;
      for (const auto& m : spec.models) {
        auto it = feat.neurons.find(m.id);
        if (it == feat.neurons.end()) continue;
        for (std::size_t slot = 0; slot < it->second.size(); ++slot) {
          const auto neuron = it->second[slot];
          switch (feat.kind) {
            case Kind::kSharedLatent: {
              const auto& z = latent_list[latent_columns[f][slot]];
              plant(f, m.id, neuron, slot, [&](std::size_t t, double& v) {
                v = z(static_cast<Eigen::Index>(t));
                return true;
              });
              break;
            }
            case Kind::kPosition:
              plant(f, m.id, neuron, slot, [&](std::size_t t, double& v) {
                v = feat.scale * static_cast<double>(row_position[t]);
                return true;
              });
              break;
            case Kind::kTokenIdentity:
              plant(f, m.id, neuron, slot, [&](std::size_t t, double& v) {
                v = type_values[f][row_type[t]];
                return true;
              });
              break;
            case Kind::kLabeledProperty:
              plant(f, m.id, neuron, slot, [&](std::size_t t, double& v) {
                if (row_labels[f][t] < 0) return false;
                v = feat.means[static_cast<std::size_t>(row_labels[f][t])];
                return true;
              });
              break;
            case Kind::kDistributed: {
              const auto& src = acts.at(feat.source_model);
              plant(f, m.id, neuron, slot, [&](std::size_t t, double& v) {
                v = 0.0;
                for (std::size_t j = 0; j < feat.sources.size(); ++j)
                  v += feat.weights[j] *
                       static_cast<double>(src(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(feat.sources[j])));
                return true;
              });
              break;
            }
          }
        }
      }
    }
  }

  std::vector<ModelRecord> models;
  for (const auto& m : spec.models) models.push_back(make_model_record(m.id, std::move(acts.at(m.id))));
  return {ActivationDataset(std::move(corpus), std::move(models), "tokens.txt"), std::move(truth)};
}

std::map<std::string, ExpectedTopSets> oracle_rankings(const GroundTruth& truth) {
  std::map<std::string, ExpectedTopSets> out;
  const std::size_t num_models = truth.spec.models.size();
  for (const auto& m : truth.spec.models) out[m.id];
  for (const auto& feat : truth.spec.features) {
    if (feat.kind == Kind::kSharedLatent && feat.neurons.size() >= 2) {
      for (const auto& [model, ids] : feat.neurons) {
        auto& sets = out[model];
        sets.maxcorr.insert(sets.maxcorr.end(), ids.begin(), ids.end());
        sets.linreg.insert(sets.linreg.end(), ids.begin(), ids.end());
        if (feat.neurons.size() == num_models) sets.mincorr.insert(sets.mincorr.end(), ids.begin(), ids.end());
      }
    } else if (feat.kind == Kind::kDistributed) {
      for (const auto& [model, ids] : feat.neurons) {
        auto& sets = out[model];
        sets.linreg.insert(sets.linreg.end(), ids.begin(), ids.end());
      }
    }
  }
  for (auto& [_, sets] : out) {
    std::sort(sets.maxcorr.begin(), sets.maxcorr.end());
    std::sort(sets.mincorr.begin(), sets.mincorr.end());
    std::sort(sets.linreg.begin(), sets.linreg.end());
  }
  return out;
}

void write_synth_output(const std::filesystem::path& dir, const SynthResult& result) {
  write_dataset(dir, result.dataset);
  const auto& truth = result.truth;
  nlohmann::ordered_json j;
  j["seed"] = truth.spec.seed;
  j["corpus_id"] = result.dataset.corpus_id();
  j["latents"] = {{"file", truth.latents.cols() ? "latents.f32" : ""},
                  {"columns", truth.latent_names}};
  nlohmann::ordered_json plants = nlohmann::ordered_json::object();
  for (const auto& [model, records] : truth.plants) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : records)
      arr.push_back({{"neuron", p.neuron}, {"kind", to_string(p.kind)}, {"feature", p.feature}, {"slot", p.slot}});
    plants[model] = std::move(arr);
  }
  j["plants"] = std::move(plants);
  nlohmann::ordered_json expected = nlohmann::ordered_json::object();
  for (const auto& [model, sets] : oracle_rankings(truth))
    expected[model] = {{"maxcorr", sets.maxcorr}, {"mincorr", sets.mincorr}, {"linreg", sets.linreg}};
  j["expected_top"] = std::move(expected);

  auto annotations = nlohmann::ordered_json::array();
  bool any_target = false;
  for (const auto& ann : truth.annotations) {
    const auto file = ann.property_name + ".tsv";
    write_file_atomic(dir / file, serialize_annotation(ann));
    annotations.push_back({{"property", ann.property_name},
                           {"side", ann.side == Side::kTarget ? "target" : "source"},
                           {"file", file}});
    any_target |= ann.side == Side::kTarget;
  }
  j["annotations"] = std::move(annotations);
  if (any_target) {
    const auto& corpus = result.dataset.corpus();
    write_file_atomic(dir / "target_tokens.txt", serialize_corpus(corpus));
    AlignmentSet identity;
    identity.links.resize(corpus.num_sentences());
    for (std::size_t s = 0; s < corpus.num_sentences(); ++s)
      for (std::size_t k = 0; k < corpus.sentence_length(s); ++k) identity.links[s].emplace_back(k, k);
    write_file_atomic(dir / "alignments.txt", serialize_alignments(identity));
    j["target_corpus"] = "target_tokens.txt";
    j["alignments"] = "alignments.txt";
  }
  if (truth.latents.cols()) {
    const Eigen::MatrixXd& l = truth.latents;
    ActivationMatrix rowmajor = l.cast<float>();
    write_file_atomic(dir / "latents.f32", serialize_activations(rowmajor));
  }
  write_file_atomic(dir / "truth.json", j.dump(2) + "\n");
}

}  // namespace ncart
