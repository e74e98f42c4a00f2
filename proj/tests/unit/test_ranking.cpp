#include <doctest.h>

#include "../support/fixtures.hpp"

using namespace ncart;
using fixtures::random_matrix;

namespace {

// Independent oracle: max over all other-model neurons of |rho| per model.
std::map<std::string, std::vector<double>> brute_per_model(const ActivationDataset& ds, const std::string& model) {
  std::map<std::string, std::vector<double>> out;
  const auto x = ds.model(model).to_double();
  for (const auto& other : ds.models()) {
    if (other.model_id == model) continue;
    const auto y = other.to_double();
    std::vector<double> best(static_cast<std::size_t>(x.cols()), 0.0);
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      for (Eigen::Index j = 0; j < y.cols(); ++j)
        best[static_cast<std::size_t>(i)] =
            std::max(best[static_cast<std::size_t>(i)],
                     std::abs(fixtures::brute_pearson(fixtures::column(x, i), fixtures::column(y, j))));
    out[other.model_id] = best;
  }
  return out;
}

// Three models, T rows: neuron 0 of A is z; B carries 0.9 z, C carries 0.2 z.
ActivationDataset graded_dataset(Eigen::Index t = 5000) {
  const auto z = random_matrix(t, 1, 500);
  Eigen::MatrixXd a = random_matrix(t, 4, 501), b = random_matrix(t, 4, 502), c = random_matrix(t, 4, 503);
  a.col(0) = z;
  b.col(2) = 0.9 * z + std::sqrt(1 - 0.81) * random_matrix(t, 1, 504);
  c.col(1) = 0.2 * z + std::sqrt(1 - 0.04) * random_matrix(t, 1, 505);
  return fixtures::make_dataset({a, b, c});
}

std::vector<std::size_t> top_units(const NeuronRanking& r, std::size_t k) {
  auto order = r.order();
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

TEST_CASE("sort_scores: direction, ties to lower id, non-finite last") {
  const double inf = std::numeric_limits<double>::infinity();
  const auto desc = sort_scores({0.5, 0.9, 0.5, 0.1}, true);
  CHECK(desc == std::vector<RankEntry>{{1, 0.9}, {0, 0.5}, {2, 0.5}, {3, 0.1}});
  const auto asc = sort_scores({0.3, inf, 0.1, 0.3}, false);
  CHECK(asc[0].unit == 2);
  CHECK(asc[1].unit == 0);
  CHECK(asc[2].unit == 3);
  CHECK(asc[3].unit == 1);
}

TEST_CASE("maxcorr: twin models score 1 everywhere") {
  const auto x = random_matrix(200, 6, 1);
  const auto ds = fixtures::make_dataset({x, x});
  const auto r = rank_maxcorr(ds, "m1");
  for (const auto& e : r.entries) CHECK(e.score == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("maxcorr / mincorr agree with the brute-force oracle") {
  const auto ds = graded_dataset();
  const auto per_model = brute_per_model(ds, "m1");
  const auto maxr = rank_maxcorr(ds, "m1");
  const auto minr = rank_mincorr(ds, "m1");
  const auto max_scores = maxr.scores_by_unit();
  const auto min_scores = minr.scores_by_unit();
  for (std::size_t i = 0; i < 4; ++i) {
    const double bmax = std::max(per_model.at("m2")[i], per_model.at("m3")[i]);
    const double bmin = std::min(per_model.at("m2")[i], per_model.at("m3")[i]);
    CHECK(max_scores[i] == doctest::Approx(bmax).epsilon(1e-12));
    CHECK(min_scores[i] == doctest::Approx(bmin).epsilon(1e-12));
    CHECK(min_scores[i] <= max_scores[i]);
  }
  // Neuron 0: ~0.9 with B, ~0.2 with C.
  CHECK(std::abs(max_scores[0] - 0.9) < 0.03);
  CHECK(std::abs(min_scores[0] - 0.2) < 0.05);
  CHECK(maxr.rank_of(0) == 1);
  CHECK(maxr.per_model_scores.at("m2")[0] == doctest::Approx(per_model.at("m2")[0]).epsilon(1e-12));
}

TEST_CASE("mincorr equals maxcorr when M = 2") {
  const auto ds = fixtures::make_dataset({random_matrix(300, 5, 3), random_matrix(300, 7, 4)});
  CHECK(rank_mincorr(ds, "m1").entries == rank_maxcorr(ds, "m1").entries);
}

TEST_CASE("mincorr prefers a neuron shared by all models over a pairwise one") {
  const Eigen::Index t = 4000;
  const auto z_all = random_matrix(t, 1, 10), z_pair = random_matrix(t, 1, 11);
  Eigen::MatrixXd a = random_matrix(t, 6, 12), b = random_matrix(t, 6, 13), c = random_matrix(t, 6, 14);
  auto noisy = [&](const Eigen::MatrixXd& z, double r, std::uint64_t seed) -> Eigen::MatrixXd {
    return r * z + std::sqrt(1 - r * r) * random_matrix(t, 1, seed);
  };
  a.col(1) = z_all;
  b.col(3) = noisy(z_all, 0.85, 20);
  c.col(4) = noisy(z_all, 0.85, 21);
  a.col(4) = z_pair;
  b.col(0) = noisy(z_pair, 0.99, 22);
  const auto ds = fixtures::make_dataset({a, b, c});
  const auto minr = rank_mincorr(ds, "m1");
  CHECK(minr.rank_of(1) < minr.rank_of(4));
  CHECK(rank_maxcorr(ds, "m1").rank_of(4) < rank_maxcorr(ds, "m1").rank_of(1));
}

TEST_CASE("correlation rankings are invariant under per-neuron affine rescaling") {
  const auto ds = graded_dataset(2000);
  std::vector<Eigen::MatrixXd> scaled;
  for (std::size_t m = 0; m < 3; ++m) {
    Eigen::MatrixXd x = ds.models()[m].to_double();
    for (Eigen::Index c = 0; c < x.cols(); ++c) x.col(c) = x.col(c) * (c % 2 ? -3.0 : 0.5) + Eigen::VectorXd::Constant(x.rows(), 7.0 * static_cast<double>(c));
    scaled.push_back(x);
  }
  const auto ds2 = fixtures::make_dataset(scaled);
  CHECK(rank_maxcorr(ds, "m1").order() == rank_maxcorr(ds2, "m1").order());
  CHECK(rank_mincorr(ds, "m2").order() == rank_mincorr(ds2, "m2").order());
}

TEST_CASE("correlation rankings need another model") {
  const auto ds = fixtures::make_dataset({random_matrix(50, 3, 1)});
  CHECK_THROWS_AS(rank_maxcorr(ds, "m1"), ValidationError);
  CHECK_THROWS_AS(rank_mincorr(ds, "m1"), ValidationError);
  CHECK_THROWS_AS(rank_linreg(ds, "m1"), ValidationError);
}

TEST_CASE("linreg: copies, distributed information, noise") {
  const Eigen::Index t = 4000;
  Eigen::MatrixXd a = random_matrix(t, 5, 30), b = random_matrix(t, 8, 31);
  a.col(0) = b.col(6);                                                    // exact copy
  a.col(1) = 0.5 * (b.col(2) + b.col(3)) + 0.02 * random_matrix(t, 1, 32);  // distributed
  const auto ds = fixtures::make_dataset({a, b});
  const auto r = rank_linreg(ds, "m1");
  const auto scores = r.scores_by_unit();
  CHECK(r.rank_of(0) == 1);
  CHECK(scores[0] < 1e-4);
  CHECK(scores[1] < 0.01);
  CHECK(rank_maxcorr(ds, "m1").scores_by_unit()[1] < 0.95);
  for (std::size_t i = 2; i < 5; ++i) CHECK(std::abs(scores[i] - 1.0) < 0.1);
  for (std::size_t i = 1; i < r.entries.size(); ++i) CHECK(r.entries[i - 1].score <= r.entries[i].score);
  CHECK(r.params.count("lambda:m2") == 1);
}

TEST_CASE("linreg: minimum over other models, raw option, degenerate neurons") {
  const Eigen::Index t = 2000;
  Eigen::MatrixXd a = random_matrix(t, 4, 40), b = random_matrix(t, 4, 41), c = random_matrix(t, 4, 42);
  a.col(2) = 4.0 * c.col(1);
  a.col(3).setConstant(1.5);
  const auto ds = fixtures::make_dataset({a, b, c});
  const auto r = rank_linreg(ds, "m1");
  const auto& per = r.per_model_scores;
  const auto scores = r.scores_by_unit();
  for (std::size_t i = 0; i < 3; ++i) CHECK(scores[i] == std::min(per.at("m2")[i], per.at("m3")[i]));
  CHECK(r.rank_of(2) == 1);
  CHECK(r.rank_of(3) == 4);
  CHECK(std::isinf(scores[3]));
  CHECK(std::find(r.flagged_units.begin(), r.flagged_units.end(), 3) != r.flagged_units.end());
  const auto raw = rank_linreg(ds, "m1", {std::nullopt, false});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto col = fixtures::column(ds.model("m1").to_double(), static_cast<Eigen::Index>(i));
    CHECK(raw.scores_by_unit()[i] == doctest::Approx(scores[i] * variance(col)).epsilon(1e-9));
  }
}

TEST_CASE("linreg warns when T < 10 D") {
  const auto ds = fixtures::make_dataset({random_matrix(100, 5, 1), random_matrix(100, 20, 2)});
  CHECK_FALSE(rank_linreg(ds, "m1").warnings.empty());
}

TEST_CASE("svcca: self comparison gives unit coefficients") {
  const auto ds = fixtures::make_dataset({random_matrix(1000, 6, 5), random_matrix(1000, 6, 6)});
  const auto dirs = rank_svcca(ds, "m1", "m1");
  for (Eigen::Index i = 0; i < dirs.scores().size(); ++i) CHECK(dirs.scores()(i) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("svcca: planted 2-D shared subspace") {
  const Eigen::Index t = 5000;
  const auto z = random_matrix(t, 2, 60);
  Eigen::MatrixXd a = random_matrix(t, 10, 61), b = random_matrix(t, 10, 62);
  a.leftCols(2) = z + 0.1 * random_matrix(t, 2, 63);
  b.col(4) = z.col(0) + z.col(1) + 0.1 * random_matrix(t, 1, 64);
  b.col(7) = z.col(0) - z.col(1) + 0.1 * random_matrix(t, 1, 65);
  const auto ds = fixtures::make_dataset({a, b});
  const auto dirs = rank_svcca(ds, "m1", "m2");
  const auto& s = dirs.scores();
  std::size_t strong = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) strong += s(i) > 0.9;
  CHECK(strong == 2);
  CHECK(s.tail(s.size() - 2).maxCoeff() < 0.3);
  const auto r = dirs.as_ranking(ds.corpus_id());
  CHECK(r.method == RankMethod::kSvcca);
  CHECK(r.size() == dirs.size());
  CHECK(r.params.count("pca_rank_a") == 1);
}

TEST_CASE("svcca: independent models stay below 0.1") {
  const auto ds = fixtures::make_dataset({random_matrix(10000, 5, 90), random_matrix(10000, 5, 91)});
  CHECK(rank_svcca(ds, "m1", "m2").scores().maxCoeff() < 0.1);
}

TEST_CASE("planted shared neurons fill the top 10 for every model") {
  const auto result = generate(fixtures::recovery_spec());
  const auto oracle = oracle_rankings(result.truth);
  for (const std::string m : {"m1", "m2", "m3"}) {
    const auto expected = fixtures::planted_ids(result.truth.spec, m);
    CHECK(oracle.at(m).maxcorr == expected);
    CHECK(precision_at_k(rank_maxcorr(result.dataset, m), expected, 10) == 1.0);
    CHECK(precision_at_k(rank_mincorr(result.dataset, m), expected, 10) == 1.0);
  }
  const auto lin = rank_linreg(result.dataset, "m1");
  CHECK(lin.rank_of(10) <= 5);
  CHECK(rank_maxcorr(result.dataset, "m1").scores_by_unit()[10] < 0.95);
}

TEST_CASE("heavy noise hides the plants") {
  auto spec = fixtures::recovery_spec();
  spec.features[0].sigma = 100.0;
  const auto result = generate(spec);
  CHECK(precision_at_k(rank_maxcorr(result.dataset, "m1"), fixtures::planted_ids(spec, "m1"), 10) <= 0.3);
}

TEST_CASE("rankings are permutations with bounded scores and are deterministic") {
  const auto ds = graded_dataset(1500);
  for (auto r : {rank_maxcorr(ds, "m2"), rank_mincorr(ds, "m2"), rank_linreg(ds, "m2")}) {
    auto order = r.order();
    std::sort(order.begin(), order.end());
    CHECK(order == std::vector<std::size_t>{0, 1, 2, 3});
    for (const auto& e : r.entries) CHECK(e.score >= 0.0);
    if (r.method != RankMethod::kLinReg)
      for (const auto& e : r.entries) CHECK(e.score <= 1.0);
  }
  CHECK(rank_linreg(ds, "m1").entries == rank_linreg(ds, "m1").entries);
  CHECK(top_units(rank_maxcorr(ds, "m1"), 1) == std::vector<std::size_t>{0});
}

TEST_CASE("precision_at_k counts hits in the first k units") {
  NeuronRanking r;
  r.entries = {{7, 0.9}, {2, 0.8}, {5, 0.1}};
  CHECK(precision_at_k(r, {2, 7}, 2) == 1.0);
  CHECK(precision_at_k(r, {5}, 2) == 0.0);
  CHECK(precision_at_k(r, {5, 2}, 2) == 0.5);
}
