#include "ncart/dataset.hpp"

#include "ncart/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <system_error>

namespace ncart {

namespace fs = std::filesystem;
using Code = ValidationError::Code;

std::string_view to_string(ValidationError::Code code) {
  switch (code) {
    case Code::kIo: return "io";
    case Code::kParse: return "parse";
    case Code::kManifest: return "manifest";
    case Code::kShapeMismatch: return "shape-mismatch";
    case Code::kTokenCountMismatch: return "token-count-mismatch";
    case Code::kCorpusMismatch: return "corpus-mismatch";
    case Code::kNonFinite: return "non-finite";
    case Code::kOutOfBounds: return "out-of-bounds";
    case Code::kConflict: return "conflict";
    case Code::kDuplicate: return "duplicate";
    case Code::kInvalidArgument: return "invalid-argument";
  }
  return "unknown";
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(Code::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_ws(const std::string& line, char sep = ' ') {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == sep || (sep == ' ' && line[i] == '\t'))) ++i;
    if (i >= line.size()) break;
    auto j = i;
    while (j < line.size() && line[j] != sep && !(sep == ' ' && line[j] == '\t')) ++j;
    out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_index(std::string_view text, std::size_t& value) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::uint64_t fnv1a(std::uint64_t hash, std::string_view bytes) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << value;
  return ss.str();
}

}  // namespace

// --- TokenCorpus -----------------------------------------------------------

TokenCorpus::TokenCorpus(std::vector<std::vector<std::string>> sentences) : sentences_(std::move(sentences)) {
  offsets_.assign(1, 0);
  offsets_.reserve(sentences_.size() + 1);
  for (std::size_t s = 0; s < sentences_.size(); ++s) {
    if (sentences_[s].empty())
      throw ValidationError(Code::kParse, "corpus sentence " + std::to_string(s) + " is empty");
    offsets_.push_back(offsets_.back() + sentences_[s].size());
  }
}

std::size_t TokenCorpus::row(std::size_t sentence, std::size_t token) const {
  if (sentence >= sentences_.size() || token >= sentences_[sentence].size())
    throw ValidationError(Code::kOutOfBounds, "token (" + std::to_string(sentence) + ", " + std::to_string(token) +
                                                  ") outside corpus");
  return offsets_[sentence] + token;
}

TokenIndex TokenCorpus::locate(std::size_t row) const {
  if (row >= num_tokens()) throw ValidationError(Code::kOutOfBounds, "row " + std::to_string(row) + " outside corpus");
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), row);
  auto s = static_cast<std::size_t>(std::distance(offsets_.begin(), it)) - 1;
  return {s, row - offsets_[s]};
}

const std::string& TokenCorpus::token(std::size_t r) const {
  auto idx = locate(r);
  return sentences_[idx.sentence][idx.token];
}

std::uint64_t TokenCorpus::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& sentence : sentences_) {
    for (const auto& tok : sentence) {
      h = fnv1a(h, tok);
      h = fnv1a(h, " ");
    }
    h = fnv1a(h, "\n");
  }
  return h;
}

// --- ModelRecord / ActivationDataset --------------------------------------

Eigen::VectorXd ModelRecord::column(std::size_t neuron) const {
  if (neuron >= num_neurons())
    throw ValidationError(Code::kOutOfBounds,
                          "neuron " + std::to_string(neuron) + " outside model '" + model_id + "'");
  return activations.col(static_cast<Eigen::Index>(neuron)).cast<double>();
}

ModelRecord make_model_record(std::string model_id, ActivationMatrix activations) {
  if (model_id.empty()) throw ValidationError(Code::kManifest, "model id must be non-empty");
  if (activations.cols() == 0) throw ValidationError(Code::kShapeMismatch, "model '" + model_id + "' has no neurons");
  for (Eigen::Index r = 0; r < activations.rows(); ++r) {
    for (Eigen::Index c = 0; c < activations.cols(); ++c) {
      if (!std::isfinite(activations(r, c)))
        throw ValidationError(Code::kNonFinite, "model '" + model_id + "': non-finite value at row " +
                                                    std::to_string(r) + ", column " + std::to_string(c));
    }
  }
  ModelRecord rec{std::move(model_id), std::move(activations), {}};
  rec.constant_columns.assign(rec.num_neurons(), true);
  if (rec.activations.rows() > 0) {
    for (Eigen::Index c = 0; c < rec.activations.cols(); ++c) {
      const float first = rec.activations(0, c);
      for (Eigen::Index r = 1; r < rec.activations.rows(); ++r) {
        if (rec.activations(r, c) != first) {
          rec.constant_columns[static_cast<std::size_t>(c)] = false;
          break;
        }
      }
    }
  }
  return rec;
}

ActivationDataset::ActivationDataset(TokenCorpus corpus, std::vector<ModelRecord> models, std::string corpus_name)
    : corpus_(std::move(corpus)), models_(std::move(models)) {
  std::set<std::string> ids;
  for (const auto& m : models_) {
    if (m.model_id.empty()) throw ValidationError(Code::kManifest, "model id must be non-empty");
    if (!ids.insert(m.model_id).second)
      throw ValidationError(Code::kDuplicate, "duplicate model id '" + m.model_id + "'");
    if (m.num_tokens() != corpus_.num_tokens())
      throw ValidationError(Code::kTokenCountMismatch, "model '" + m.model_id + "' has " +
                                                           std::to_string(m.num_tokens()) + " rows, corpus has " +
                                                           std::to_string(corpus_.num_tokens()) + " tokens");
  }
  corpus_id_ = (corpus_name.empty() ? std::string("corpus") : corpus_name) + "#" + hex64(corpus_.digest());
}

std::size_t ActivationDataset::model_index(const std::string& id) const {
  for (std::size_t i = 0; i < models_.size(); ++i)
    if (models_[i].model_id == id) return i;
  throw ValidationError(Code::kInvalidArgument, "unknown model '" + id + "'");
}

const ModelRecord& ActivationDataset::model(const std::string& id) const { return models_[model_index(id)]; }

bool ActivationDataset::has_model(const std::string& id) const {
  return std::any_of(models_.begin(), models_.end(), [&](const auto& m) { return m.model_id == id; });
}

// --- annotations / alignments --------------------------------------------

std::vector<std::string> PropertyAnnotation::vocabulary() const {
  std::set<std::string> vocab;
  for (const auto& [_, label] : labels) vocab.insert(label);
  return {vocab.begin(), vocab.end()};
}

const std::string* PropertyAnnotation::find(TokenIndex index) const {
  auto it = labels.find(index);
  return it == labels.end() ? nullptr : &it->second;
}

std::vector<std::size_t> AlignmentSet::targets_of(std::size_t sentence, std::size_t source_token) const {
  std::vector<std::size_t> out;
  if (sentence >= links.size()) return out;
  for (const auto& [s, t] : links[sentence])
    if (s == source_token) out.push_back(t);
  std::sort(out.begin(), out.end());
  return out;
}

// --- loading -------------------------------------------------------------

TokenCorpus load_corpus(const fs::path& path) {
  auto lines = split_lines(read_text(path));
  std::vector<std::vector<std::string>> sentences;
  sentences.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto toks = split_ws(lines[i], ' ');
    if (toks.empty())
      throw ValidationError(Code::kParse, path.string() + ":" + std::to_string(i + 1) + ": empty sentence");
    sentences.push_back(std::move(toks));
  }
  return TokenCorpus(std::move(sentences));
}

ActivationMatrix load_activations(const fs::path& path, std::size_t rows, std::size_t cols,
                                  const std::string& model_id) {
  std::error_code ec;
  auto size = fs::file_size(path, ec);
  if (ec) throw ValidationError(Code::kIo, "model '" + model_id + "': cannot read " + path.string());
  const auto expected = static_cast<std::uintmax_t>(rows) * cols * sizeof(float);
  if (size != expected) {
    throw ValidationError(Code::kShapeMismatch,
                          "model '" + model_id + "': " + path.filename().string() + " holds " + std::to_string(size) +
                              " bytes, expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                              " float32 = " + std::to_string(expected) + " bytes");
  }
  ActivationMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(Code::kIo, "model '" + model_id + "': cannot open " + path.string());
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
  if (!in) throw ValidationError(Code::kIo, "model '" + model_id + "': short read on " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    auto* words = reinterpret_cast<std::uint32_t*>(m.data());
    for (std::size_t i = 0; i < rows * cols; ++i) words[i] = __builtin_bswap32(words[i]);
  }
  return m;
}

ActivationDataset load_dataset(const fs::path& manifest_arg) {
  fs::path manifest_path = fs::is_directory(manifest_arg) ? manifest_arg / "manifest.json" : manifest_arg;
  const fs::path base = manifest_path.parent_path();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(Code::kManifest, manifest_path.string() + ": not a JSON manifest: " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("corpus") || !manifest["corpus"].is_string() ||
      !manifest.contains("models") || !manifest["models"].is_array())
    throw ValidationError(Code::kManifest, manifest_path.string() + ": expected {\"corpus\": str, \"models\": [...]}");

  const std::string corpus_file = manifest["corpus"].get<std::string>();
  TokenCorpus corpus = load_corpus(base / corpus_file);
  const std::size_t tokens = corpus.num_tokens();

  std::vector<ModelRecord> models;
  for (const auto& entry : manifest["models"]) {
    if (!entry.is_object() || !entry.contains("id") || !entry["id"].is_string() || !entry.contains("neurons") ||
        !entry["neurons"].is_number_integer() || !entry.contains("file") || !entry["file"].is_string())
      throw ValidationError(Code::kManifest, "manifest model entries need id (str), neurons (int), file (str)");
    const auto id = entry["id"].get<std::string>();
    const auto neurons = entry["neurons"].get<long long>();
    if (neurons <= 0) throw ValidationError(Code::kManifest, "model '" + id + "': neurons must be positive");
    if (entry.contains("corpus") && entry["corpus"].get<std::string>() != corpus_file)
      throw ValidationError(Code::kCorpusMismatch, "model '" + id + "' was dumped over a different corpus");
    if (entry.contains("tokens") && entry["tokens"].get<long long>() != static_cast<long long>(tokens))
      throw ValidationError(Code::kTokenCountMismatch, "model '" + id + "' declares " +
                                                           std::to_string(entry["tokens"].get<long long>()) +
                                                           " tokens, corpus has " + std::to_string(tokens));
    auto acts = load_activations(base / entry["file"].get<std::string>(), tokens, static_cast<std::size_t>(neurons), id);
    models.push_back(make_model_record(id, std::move(acts)));
  }
  if (models.empty()) throw ValidationError(Code::kManifest, "manifest lists no models");
  return ActivationDataset(std::move(corpus), std::move(models), fs::path(corpus_file).filename().string());
}

PropertyAnnotation load_annotation(const fs::path& path, const TokenCorpus& corpus,
                                   std::optional<std::string> property_name, Side side) {
  PropertyAnnotation ann;
  ann.property_name = property_name.value_or(path.stem().string());
  ann.side = side;
  auto lines = split_lines(read_text(path));
  bool first_row = true;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto& line = lines[ln];
    const auto where = path.string() + ":" + std::to_string(ln + 1);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_ws(line, '\t');
    std::size_t s = 0, k = 0;
    const bool numeric = fields.size() >= 2 && parse_index(fields[0], s) && parse_index(fields[1], k);
    if (first_row) {
      first_row = false;
      if (!numeric) continue;  // header
    }
    if (fields.size() != 3 || !numeric)
      throw ValidationError(Code::kParse, where + ": expected sentence_index<TAB>token_index<TAB>label");
    if (!corpus.contains({s, k}))
      throw ValidationError(Code::kOutOfBounds, where + ": token (" + std::to_string(s) + ", " + std::to_string(k) +
                                                    ") outside corpus");
    auto [it, inserted] = ann.labels.emplace(TokenIndex{s, k}, fields[2]);
    if (!inserted && it->second != fields[2])
      throw ValidationError(Code::kConflict, where + ": token (" + std::to_string(s) + ", " + std::to_string(k) +
                                                 ") labeled both '" + it->second + "' and '" + fields[2] + "'");
  }
  return ann;
}

AlignmentSet load_alignments(const fs::path& path, const TokenCorpus& source, const TokenCorpus& target) {
  auto text = read_text(path);
  auto lines = split_lines(text);
  if (lines.size() != source.num_sentences() || source.num_sentences() != target.num_sentences())
    throw ValidationError(Code::kShapeMismatch, path.string() + ": " + std::to_string(lines.size()) +
                                                    " alignment lines for " + std::to_string(source.num_sentences()) +
                                                    " sentence pairs");
  AlignmentSet out;
  out.links.resize(lines.size());
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto where = path.string() + ":" + std::to_string(ln + 1);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& tok : split_ws(lines[ln], ' ')) {
      auto dash = tok.find('-');
      std::size_t i = 0, j = 0;
      if (dash == std::string::npos || !parse_index(std::string_view(tok).substr(0, dash), i) ||
          !parse_index(std::string_view(tok).substr(dash + 1), j))
        throw ValidationError(Code::kParse, where + ": malformed alignment pair '" + tok + "'");
      if (i >= source.sentence_length(ln) || j >= target.sentence_length(ln))
        throw ValidationError(Code::kOutOfBounds, where + ": link " + tok + " outside sentence bounds");
      if (!seen.emplace(i, j).second)
        throw ValidationError(Code::kDuplicate, where + ": duplicate link " + tok);
      out.links[ln].emplace_back(i, j);
    }
  }
  return out;
}

// --- writing -------------------------------------------------------------

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError(Code::kIo, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ValidationError(Code::kIo, "short write on " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw ValidationError(Code::kIo, "cannot rename " + tmp.string() + " -> " + path.string());
}

std::string serialize_corpus(const TokenCorpus& corpus) {
  std::string out;
  for (const auto& sentence : corpus.sentences()) {
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      if (i) out += ' ';
      out += sentence[i];
    }
    out += '\n';
  }
  return out;
}

std::string serialize_annotation(const PropertyAnnotation& annotation) {
  std::string out = "sentence_index\ttoken_index\tlabel\n";
  for (const auto& [idx, label] : annotation.labels)
    out += std::to_string(idx.sentence) + '\t' + std::to_string(idx.token) + '\t' + label + '\n';
  return out;
}

std::string serialize_alignments(const AlignmentSet& alignments) {
  std::string out;
  for (const auto& sentence : alignments.links) {
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(sentence[i].first) + '-' + std::to_string(sentence[i].second);
    }
    out += '\n';
  }
  return out;
}

std::string serialize_activations(const ActivationMatrix& activations) {
  std::string out(static_cast<std::size_t>(activations.size()) * sizeof(float), '\0');
  std::memcpy(out.data(), activations.data(), out.size());
  if constexpr (std::endian::native == std::endian::big) {
    auto* words = reinterpret_cast<std::uint32_t*>(out.data());
    for (Eigen::Index i = 0; i < activations.size(); ++i) words[i] = __builtin_bswap32(words[i]);
  }
  return out;
}

void write_dataset(const fs::path& dir, const ActivationDataset& dataset) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["corpus"] = "tokens.txt";
  manifest["models"] = nlohmann::ordered_json::array();
  write_file_atomic(dir / "tokens.txt", serialize_corpus(dataset.corpus()));
  for (const auto& m : dataset.models()) {
    const auto file = m.model_id + ".f32";
    write_file_atomic(dir / file, serialize_activations(m.activations));
    manifest["models"].push_back({{"id", m.model_id}, {"neurons", m.num_neurons()}, {"file", file}});
  }
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace ncart
