#pragma once
// Shared fixtures and brute-force oracles for the unit and acceptance suites.
// Oracles are written independently of the library: naive loops, long double
// accumulation, no Eigen decompositions unless noted.

#include "ncart/ncart.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = nd(gen);
  return m;
}

/// Textbook Pearson from raw sums of deviations.
inline double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

inline std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, c);
  return out;
}

/// Explained variance straight from the definition: group means, then
/// 1 - sum_g n_g Var_g / (T Var).
inline double brute_explained_variance(const std::vector<double>& v, const std::vector<std::size_t>& g) {
  std::map<std::size_t, std::vector<double>> groups;
  for (std::size_t i = 0; i < v.size(); ++i) groups[g[i]].push_back(v[i]);
  auto pvar = [](const std::vector<double>& xs) {
    long double m = 0;
    for (double x : xs) m += x;
    m /= xs.size();
    long double s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    return static_cast<double>(s / xs.size());
  };
  long double within = 0;
  for (const auto& [_, xs] : groups) within += xs.size() * pvar(xs);
  return 1.0 - static_cast<double>(within / v.size()) / pvar(v);
}

/// Rank of a matrix via a full SVD with a relative tolerance.
inline Eigen::Index numeric_rank(const Eigen::MatrixXd& m, double tol = 1e-9) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > tol * s(0)) ++r;
  return r;
}

/// Sentences of the given lengths with tokens "t<sentence>_<index>".
inline ncart::TokenCorpus make_corpus(const std::vector<std::size_t>& lengths) {
  std::vector<std::vector<std::string>> sentences;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    std::vector<std::string> tokens;
    for (std::size_t k = 0; k < lengths[s]; ++k) tokens.push_back("t" + std::to_string(s) + "_" + std::to_string(k));
    sentences.push_back(std::move(tokens));
  }
  return ncart::TokenCorpus(std::move(sentences));
}

/// One sentence-per-chunk corpus covering exactly `rows` tokens.
inline ncart::TokenCorpus corpus_for_rows(std::size_t rows, std::size_t sentence_length = 10) {
  std::vector<std::size_t> lengths;
  for (std::size_t done = 0; done < rows; done += sentence_length) lengths.push_back(std::min(sentence_length, rows - done));
  return make_corpus(lengths);
}

inline ncart::ActivationDataset make_dataset(const std::vector<Eigen::MatrixXd>& matrices,
                                             std::size_t sentence_length = 10) {
  std::vector<ncart::ModelRecord> models;
  for (std::size_t i = 0; i < matrices.size(); ++i)
    models.push_back(ncart::make_model_record("m" + std::to_string(i + 1), matrices[i].cast<float>()));
  return ncart::ActivationDataset(corpus_for_rows(static_cast<std::size_t>(matrices.front().rows()), sentence_length),
                                  std::move(models));
}

/// M=3, D=100, ~5000 tokens, 10 shared-latent plants per model at sigma 0.1,
/// plus one distributed plant in m1 (mean of two m2 neurons).
inline ncart::SynthSpec recovery_spec(std::uint64_t seed = 7) {
  ncart::SynthSpec spec;
  spec.seed = seed;
  for (int i = 1; i <= 3; ++i) spec.models.push_back({"m" + std::to_string(i), 100});
  spec.corpus.sentences = 250;
  spec.corpus.min_length = 15;
  spec.corpus.max_length = 25;
  spec.corpus.vocabulary = 80;
  ncart::PlantedFeature shared;
  shared.kind = ncart::PlantedFeature::Kind::kSharedLatent;
  shared.sigma = 0.1;
  shared.neurons["m1"] = {3, 14, 25, 36, 47, 58, 69, 80, 91, 2};
  shared.neurons["m2"] = {5, 16, 27, 38, 49, 60, 71, 82, 93, 4};
  shared.neurons["m3"] = {7, 18, 29, 40, 51, 62, 73, 84, 95, 6};
  spec.features.push_back(shared);
  ncart::PlantedFeature dist;
  dist.kind = ncart::PlantedFeature::Kind::kDistributed;
  dist.sigma = 0.05;
  dist.neurons["m1"] = {10};
  dist.source_model = "m2";
  dist.sources = {11, 12};
  dist.weights = {0.5, 0.5};
  spec.features.push_back(dist);
  return spec;
}

inline std::vector<std::size_t> planted_ids(const ncart::SynthSpec& spec, const std::string& model) {
  auto ids = spec.features.front().neurons.at(model);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// One model whose neuron `neuron` separates a random two-label property with
/// the given means; every other neuron is N(0,1).
inline ncart::SynthSpec labeled_spec(std::size_t neuron, double mean_a, double mean_b, double coverage = 1.0,
                                     ncart::Side side = ncart::Side::kSource, std::uint64_t seed = 11) {
  ncart::SynthSpec spec;
  spec.seed = seed;
  spec.models.push_back({"enc", 32});
  spec.corpus.sentences = 200;
  spec.corpus.min_length = 6;
  spec.corpus.max_length = 16;
  spec.corpus.vocabulary = 40;
  ncart::PlantedFeature f;
  f.kind = ncart::PlantedFeature::Kind::kLabeledProperty;
  f.name = "tense";
  f.side = side;
  f.assignment = "random";
  f.labels = {"past", "present"};
  f.means = {mean_a, mean_b};
  f.sigma = 0.3;
  f.coverage = coverage;
  f.neurons["enc"] = {neuron};
  spec.features.push_back(f);
  return spec;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("ncart_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fixtures
