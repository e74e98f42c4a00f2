#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ncart {

/// Activations as stored on disk: row = token, column = neuron, float32, row-major.
using ActivationMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Position of a token inside the corpus.
struct TokenIndex {
  std::size_t sentence = 0;
  std::size_t token = 0;

  auto operator<=>(const TokenIndex&) const = default;
};

/// Tokenized sentences plus the cumulative offsets that map (sentence, token)
/// pairs to global activation rows and back.
class TokenCorpus {
 public:
  TokenCorpus() = default;
  explicit TokenCorpus(std::vector<std::vector<std::string>> sentences);

  std::size_t num_sentences() const { return sentences_.size(); }
  std::size_t num_tokens() const { return offsets_.back(); }
  std::size_t sentence_length(std::size_t s) const { return sentences_.at(s).size(); }

  const std::vector<std::vector<std::string>>& sentences() const { return sentences_; }
  const std::vector<std::string>& sentence(std::size_t s) const { return sentences_.at(s); }
  const std::string& token(std::size_t row) const;

  /// Offsets has num_sentences()+1 entries; offsets()[s] is the first row of s.
  const std::vector<std::size_t>& offsets() const { return offsets_; }

  std::size_t row(std::size_t sentence, std::size_t token) const;
  std::size_t row(TokenIndex index) const { return row(index.sentence, index.token); }
  TokenIndex locate(std::size_t row) const;

  bool contains(TokenIndex index) const {
    return index.sentence < sentences_.size() && index.token < sentences_[index.sentence].size();
  }

  /// Stable 64-bit FNV-1a digest over the token stream.
  std::uint64_t digest() const;

  bool operator==(const TokenCorpus& other) const { return sentences_ == other.sentences_; }

 private:
  std::vector<std::vector<std::string>> sentences_;
  std::vector<std::size_t> offsets_{0};
};

/// One model's activation dump.
struct ModelRecord {
  std::string model_id;
  ActivationMatrix activations;      // T x D
  std::vector<bool> constant_columns;  // flagged zero-variance neurons

  std::size_t num_neurons() const { return static_cast<std::size_t>(activations.cols()); }
  std::size_t num_tokens() const { return static_cast<std::size_t>(activations.rows()); }

  /// Column-major double copy for analysis.
  Eigen::MatrixXd to_double() const { return activations.cast<double>(); }
  Eigen::VectorXd column(std::size_t neuron) const;
};

/// Builds a ModelRecord, validating finiteness and flagging constant columns.
ModelRecord make_model_record(std::string model_id, ActivationMatrix activations);

/// M models' activations over one shared corpus. Immutable once built.
class ActivationDataset {
 public:
  ActivationDataset(TokenCorpus corpus, std::vector<ModelRecord> models, std::string corpus_name = {});

  const TokenCorpus& corpus() const { return corpus_; }
  const std::vector<ModelRecord>& models() const { return models_; }
  std::size_t num_models() const { return models_.size(); }
  std::size_t num_tokens() const { return corpus_.num_tokens(); }

  const ModelRecord& model(const std::string& id) const;
  std::size_t model_index(const std::string& id) const;
  bool has_model(const std::string& id) const;

  /// "<corpus file name>#<fnv1a hex>", recorded in every report.
  const std::string& corpus_id() const { return corpus_id_; }

 private:
  TokenCorpus corpus_;
  std::vector<ModelRecord> models_;
  std::string corpus_id_;
};

enum class Side { kSource, kTarget };

/// Sparse per-token categorical labels. Unannotated tokens are absent.
struct PropertyAnnotation {
  std::string property_name;
  Side side = Side::kSource;
  std::map<TokenIndex, std::string> labels;

  /// Sorted label vocabulary; a label's class id is its position here.
  std::vector<std::string> vocabulary() const;
  const std::string* find(TokenIndex index) const;
  bool empty() const { return labels.empty(); }
};

/// Per sentence pair: (source index, target index) links.
struct AlignmentSet {
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> links;

  std::size_t num_sentences() const { return links.size(); }
  /// Target indices linked to a source token, ascending.
  std::vector<std::size_t> targets_of(std::size_t sentence, std::size_t source_token) const;
};

// --- loading -------------------------------------------------------------

/// Reads tokens.txt: UTF-8, one sentence per line, tokens separated by spaces.
TokenCorpus load_corpus(const std::filesystem::path& path);

/// Loads manifest.json and everything it references. A directory argument is
/// resolved to <dir>/manifest.json.
ActivationDataset load_dataset(const std::filesystem::path& manifest_path);

/// Reads a raw little-endian float32 payload of exactly rows*cols values.
ActivationMatrix load_activations(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                                  const std::string& model_id);

PropertyAnnotation load_annotation(const std::filesystem::path& path, const TokenCorpus& corpus,
                                   std::optional<std::string> property_name = std::nullopt,
                                   Side side = Side::kSource);

/// Parses Pharaoh "i-j" alignments, one line per sentence pair.
AlignmentSet load_alignments(const std::filesystem::path& path, const TokenCorpus& source,
                             const TokenCorpus& target);

// --- writing -------------------------------------------------------------

/// Writes path atomically: content goes to a sibling temp file that is then renamed.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string serialize_corpus(const TokenCorpus& corpus);
std::string serialize_annotation(const PropertyAnnotation& annotation);
std::string serialize_alignments(const AlignmentSet& alignments);
std::string serialize_activations(const ActivationMatrix& activations);

/// Writes manifest.json, tokens.txt and one <id>.f32 per model into dir.
void write_dataset(const std::filesystem::path& dir, const ActivationDataset& dataset);

}  // namespace ncart
