#include <doctest.h>

#include "../support/fixtures.hpp"

#include <random>

using namespace ncart;
using fixtures::random_matrix;

namespace {

LabeledSamples samples_1d(const std::vector<double>& values, const std::vector<std::string>& labels) {
  LabeledSamples s;
  s.values.resize(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) s.values(static_cast<Eigen::Index>(i), 0) = values[i];
  s.labels = labels;
  return s;
}

LabeledSamples two_gaussians(double mean_a, double mean_b, std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v;
  std::vector<std::string> l;
  for (std::size_t i = 0; i < per_class; ++i) {
    v.push_back(mean_a + nd(gen));
    l.push_back("a");
    v.push_back(mean_b + nd(gen));
    l.push_back("b");
  }
  return samples_1d(v, l);
}

}  // namespace

TEST_CASE("explained variance: deterministic position function is exactly 1") {
  const auto corpus = fixtures::make_corpus({7, 3, 12, 5, 9});
  const auto groups = position_groups(corpus);
  std::vector<double> v;
  for (std::size_t row = 0; row < corpus.num_tokens(); ++row) {
    const double p = static_cast<double>(corpus.locate(row).token);
    v.push_back(0.1 * p * p - std::sin(p));
  }
  const auto ev = explained_variance(v, groups);
  CHECK(ev.fraction == 1.0);
  CHECK(ev.num_groups == 12);
  CHECK(ev.num_rows == corpus.num_tokens());
}

TEST_CASE("explained variance: i.i.d. noise with large groups stays under 0.01") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::vector<double> v;
  std::vector<std::size_t> g;
  for (std::size_t i = 0; i < 20000; ++i) {
    v.push_back(nd(gen));
    g.push_back(i % 10);  // ten groups of 2000
  }
  const auto ev = explained_variance(v, g);
  CHECK(ev.fraction <= 0.01);
  CHECK(ev.small_group_mass == 0.0);
}

TEST_CASE("explained variance matches the law-of-total-variance oracle") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v;
    std::vector<std::size_t> g;
    for (std::size_t i = 0; i < 300; ++i) {
      g.push_back(gen() % 7);
      v.push_back(0.5 * static_cast<double>(g.back()) + nd(gen));
    }
    CHECK(explained_variance(v, g).fraction == doctest::Approx(fixtures::brute_explained_variance(v, g)).epsilon(1e-12));
  }
}

TEST_CASE("explained variance: refining a grouping never lowers the fraction") {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> nd;
  for (int pair = 0; pair < 50; ++pair) {
    const std::size_t n = 200 + gen() % 300;
    std::vector<double> v;
    std::vector<std::size_t> coarse, fine;
    for (std::size_t i = 0; i < n; ++i) {
      coarse.push_back(gen() % 5);
      fine.push_back(coarse.back() * 4 + gen() % 4);  // splits each coarse group
      v.push_back(nd(gen) + 0.3 * static_cast<double>(fine.back() % 3));
    }
    CHECK(explained_variance(v, fine).fraction >= explained_variance(v, coarse).fraction - 1e-12);
  }
}

TEST_CASE("explained variance: equal group means give 0, constant input is rejected") {
  // Each group holds {-1, +1} around the same mean.
  std::vector<double> v{-1, 1, -1, 1, -2, 2};
  std::vector<std::size_t> g{0, 0, 1, 1, 2, 2};
  CHECK(std::abs(explained_variance(v, g).fraction) <= 1e-12);
  CHECK(explained_variance(v, g).small_group_mass == 1.0);
  std::vector<double> flat{2, 2, 2};
  std::vector<std::size_t> fg{0, 1, 2};
  CHECK_THROWS_AS(explained_variance(flat, fg), NumericalError);
}

TEST_CASE("explained variance on a dataset: position, token and annotation groupings") {
  const auto result = generate([] {
    SynthSpec spec;
    spec.seed = 5;
    spec.models.push_back({"m", 6});
    spec.corpus.sentences = 400;
    spec.corpus.vocabulary = 30;
    PlantedFeature pos;
    pos.kind = PlantedFeature::Kind::kPosition;
    pos.sigma = 0.05;
    pos.neurons["m"] = {1};
    spec.features.push_back(pos);
    PlantedFeature tok;
    tok.kind = PlantedFeature::Kind::kTokenIdentity;
    tok.sigma = 0.05;
    tok.neurons["m"] = {4};
    spec.features.push_back(tok);
    return spec;
  }());
  const auto& ds = result.dataset;
  CHECK(explained_variance(ds, "m", 1, Grouping::kPosition).fraction >= 0.95);
  CHECK(explained_variance(ds, "m", 4, Grouping::kToken).fraction >= 0.95);
  CHECK(explained_variance(ds, "m", 4, Grouping::kPosition).fraction < 0.05);
  CHECK(explained_variance(ds, "m", 0, Grouping::kToken).fraction < 0.1);

  PropertyAnnotation ann;
  ann.property_name = "first";
  for (std::size_t s = 0; s < ds.corpus().num_sentences(); ++s) {
    ann.labels[{s, 0}] = "start";
    ann.labels[{s, 1}] = "second";
  }
  const auto by_ann = explained_variance(ds, "m", 1, Grouping::kAnnotation, &ann);
  CHECK(by_ann.num_rows == 2 * ds.corpus().num_sentences());
  CHECK(by_ann.fraction > 0.9);
  CHECK_THROWS_AS(explained_variance(ds, "m", 1, Grouping::kAnnotation), ValidationError);
}

TEST_CASE("gmm: symmetric classes put the boundary near zero") {
  const auto model = gmm_fit(two_gaussians(-5, 5, 500, 1), {0});
  double lo = -5, hi = 5;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (model.predict(Eigen::VectorXd::Constant(1, mid)) == "a" ? lo : hi) = mid;
  }
  CHECK(std::abs(lo) <= 0.5);
  double prior_sum = 0.0;
  for (double p : model.priors) prior_sum += p;
  CHECK(prior_sum == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& comps : model.components)
    for (const auto& c : comps) CHECK(c.variance(0) >= model.variance_floor(0));
}

TEST_CASE("gmm: a single class is an error; rare classes are dropped") {
  CHECK_THROWS_AS(gmm_fit(samples_1d({1, 2, 3}, {"x", "x", "x"}), {0}), ValidationError);
  const auto model = gmm_fit(samples_1d({1, 2, 3, 4, 9}, {"x", "x", "y", "y", "z"}), {0});
  CHECK(model.classes == std::vector<std::string>{"x", "y"});
  CHECK(model.dropped_classes == std::vector<std::string>{"z"});
}

TEST_CASE("gmm: identical class distributions fall back to the prior") {
  std::vector<double> v;
  std::vector<std::string> l;
  for (double x : {-1.0, 0.3, 2.0, 0.7}) {
    for (int rep = 0; rep < 3; ++rep) {
      v.push_back(x);
      l.push_back("common");
    }
    v.push_back(x);
    l.push_back("rare");
  }
  const auto model = gmm_fit(samples_1d(v, l), {0});
  for (double x : {-10.0, -1.0, 0.0, 0.5, 3.0, 40.0}) CHECK(model.predict(Eigen::VectorXd::Constant(1, x)) == "common");
}

TEST_CASE("gmm: predictions survive a common affine rescaling") {
  auto s = two_gaussians(-1, 1.5, 300, 2);
  const auto base = gmm_fit(s, {0});
  auto t = s;
  t.values = (-2.5 * s.values).array() + 4.0;
  const auto moved = gmm_fit(t, {0});
  for (Eigen::Index i = 0; i < s.values.rows(); ++i)
    CHECK(base.predict(s.values.row(i).transpose()) == moved.predict(t.values.row(i).transpose()));
}

TEST_CASE("gmm_score matches a brute-force confusion count") {
  auto fit = two_gaussians(-0.5, 0.5, 400, 3);
  auto eval = two_gaussians(-0.5, 0.5, 400, 4);
  eval.labels[0] = "c";  // a gold label the model never saw
  const auto model = gmm_fit(fit, {0});
  const auto score = gmm_score(model, eval);
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < eval.values.rows(); ++i) {
    const auto& pred = model.predict(eval.values.row(i).transpose());
    counts[eval.labels[static_cast<std::size_t>(i)]][pred]++;
    correct += pred == eval.labels[static_cast<std::size_t>(i)];
  }
  CHECK(score.total == static_cast<std::size_t>(eval.values.rows()));
  CHECK(score.accuracy == static_cast<double>(correct) / static_cast<double>(score.total));
  REQUIRE(score.classes.size() == 3);
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t p = 0; p < 3; ++p)
      CHECK(score.confusion[g][p] == counts[score.classes[g].label][score.classes[p].label]);
  for (const auto& cls : score.classes) {
    std::size_t tp = counts[cls.label][cls.label], fp = 0, fn = 0;
    for (const auto& other : score.classes) {
      if (other.label == cls.label) continue;
      fp += counts[other.label][cls.label];
      fn += counts[cls.label][other.label];
    }
    CHECK(cls.support == tp + fn);
    if (tp + fn == 0) continue;
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    REQUIRE(cls.f1.has_value());
    CHECK(*cls.f1 == doctest::Approx(f1).epsilon(1e-15));
  }
}

TEST_CASE("gmm_score: absent classes and chance-level labels") {
  const auto model = gmm_fit(two_gaussians(-3, 3, 100, 5), {0});
  const auto only_a = samples_1d({-3, -2.5, -3.5}, {"a", "a", "a"});
  const auto score = gmm_score(model, only_a);
  REQUIRE(score.find("b") != nullptr);
  CHECK_FALSE(score.find("b")->f1.has_value());
  CHECK(score.macro_f1 == 1.0);

  std::mt19937_64 gen(6);
  std::normal_distribution<double> nd;
  std::vector<double> v;
  std::vector<std::string> l;
  for (int i = 0; i < 4000; ++i) {
    v.push_back(nd(gen));
    l.push_back(gen() % 2 ? "x" : "y");
  }
  const auto half = v.size() / 2;
  const auto fit = samples_1d({v.begin(), v.begin() + static_cast<long>(half)}, {l.begin(), l.begin() + static_cast<long>(half)});
  const auto eval = samples_1d({v.begin() + static_cast<long>(half), v.end()}, {l.begin() + static_cast<long>(half), l.end()});
  CHECK(std::abs(gmm_score(gmm_fit(fit, {0}), eval).accuracy - 0.5) <= 0.05);
}

TEST_CASE("gmm: separable synth property reaches F1 >= 0.99") {
  const auto result = generate(fixtures::labeled_spec(12, -3.0, 3.0));
  const auto& ann = result.truth.annotations.at(0);
  const auto report = neuron_leaderboard(result.dataset, "enc", ann);
  CHECK(report.best().neuron == 12);
  for (const auto& c : report.best().classes) CHECK(c.f1.value() >= 0.99);
}

TEST_CASE("gmm: two components per class capture a bimodal class") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd;
  std::vector<double> v;
  std::vector<std::string> l;
  for (int i = 0; i < 600; ++i) {
    v.push_back((i % 2 ? -6.0 : 6.0) + nd(gen));
    l.push_back("outer");
    v.push_back(0.5 * nd(gen));
    l.push_back("inner");
  }
  const auto s = samples_1d(v, l);
  GmmOptions two;
  two.components_per_class = 2;
  const auto model = gmm_fit(s, {0}, two);
  for (const auto& comps : model.components) {
    double w = 0.0;
    for (const auto& c : comps) w += c.weight;
    CHECK(w == doctest::Approx(1.0).epsilon(1e-9));
  }
  const auto& outer = model.components[1];
  REQUIRE(outer.size() == 2);
  CHECK(std::min(outer[0].mean(0), outer[1].mean(0)) < -4.0);
  CHECK(std::max(outer[0].mean(0), outer[1].mean(0)) > 4.0);
  CHECK(gmm_score(model, s).accuracy >= gmm_score(gmm_fit(s, {0}), s).accuracy);
}

TEST_CASE("split rows: even sentences fit, odd evaluate") {
  const auto corpus = fixtures::make_corpus({2, 2, 2});
  std::vector<std::pair<TokenIndex, std::string>> labeled{{{0, 0}, "a"}, {{1, 1}, "b"}, {{2, 0}, "b"}};
  const auto split = split_rows(labeled, corpus, SplitMode::kEvenOdd);
  CHECK(split.fit_rows == std::vector<std::size_t>{0, 4});
  CHECK(split.eval_rows == std::vector<std::size_t>{3});
  const auto all = split_rows(labeled, corpus, SplitMode::kInSample);
  CHECK(all.fit_rows == all.eval_rows);
  CHECK(all.fit_rows.size() == 3);
}

TEST_CASE("leaderboard: a unique neuron wins clearly") {
  const auto result = generate(fixtures::labeled_spec(12, -3.0, 3.0));
  const auto& ds = result.dataset;
  const auto report = neuron_leaderboard(ds, "enc", result.truth.annotations.at(0));
  CHECK(report.entries.size() == 32);
  CHECK(report.best().neuron == 12);
  CHECK(report.best().metric >= 0.99);
  CHECK(report.second().metric <= 0.6);
  for (std::size_t i = 1; i < report.entries.size(); ++i) CHECK(report.entries[i - 1].metric >= report.entries[i].metric);
  for (const auto& e : report.entries) {
    CHECK(e.metric >= 0.0);
    CHECK(e.metric <= 1.0);
  }
}

TEST_CASE("leaderboard: redundant encoding puts both neurons on top") {
  auto spec = fixtures::labeled_spec(12, -3.0, 3.0);
  spec.features[0].neurons["enc"] = {12, 20};
  const auto result = generate(spec);
  const auto report = neuron_leaderboard(result.dataset, "enc", result.truth.annotations.at(0));
  std::vector<std::size_t> top{report.best().neuron, report.second().neuron};
  std::sort(top.begin(), top.end());
  CHECK(top == std::vector<std::size_t>{12, 20});
  CHECK(std::abs(report.best().metric - report.second().metric) <= 0.05);
}

TEST_CASE("leaderboard: metrics, rank cross-references, errors") {
  auto spec = fixtures::labeled_spec(3, -2.0, 2.0);
  spec.models.push_back({"dec", 16});
  const auto result = generate(spec);
  const auto& ds = result.dataset;
  const auto& ann = result.truth.annotations.at(0);
  std::vector<NeuronRanking> rankings{rank_maxcorr(ds, "enc"), rank_mincorr(ds, "enc"), rank_linreg(ds, "enc")};
  ProbeOptions opts;
  opts.metric = "f1:past";
  const auto report = neuron_leaderboard(ds, "enc", ann, opts, rankings);
  CHECK(report.best().neuron == 3);
  CHECK(report.best().ranks.at("maxcorr") == rankings[0].rank_of(3));
  CHECK(report.best().ranks.at("linreg") == rankings[2].rank_of(3));
  opts.metric = "accuracy";
  CHECK(neuron_leaderboard(ds, "enc", ann, opts).best().metric == neuron_leaderboard(ds, "enc", ann, opts).best().accuracy);
  opts.metric = "bogus";
  CHECK_THROWS_AS(neuron_leaderboard(ds, "enc", ann, opts), ValidationError);
  PropertyAnnotation empty;
  empty.property_name = "nothing";
  CHECK_THROWS_AS(neuron_leaderboard(ds, "enc", empty), ValidationError);
}
