#include <doctest.h>

#include "../support/fixtures.hpp"

#include <cstring>

using namespace ncart;
using fixtures::random_matrix;

namespace {

NeuronRanking ranking_of(std::vector<std::size_t> units) {
  NeuronRanking r;
  double score = 1.0;
  for (auto u : units) r.entries.push_back({u, score -= 0.01});
  return r;
}

bool bitwise_equal(const ActivationMatrix& a, const ActivationMatrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("mask_neurons takes the first or last k units") {
  const auto r = ranking_of({7, 2, 5, 0, 1, 3, 4, 6});
  CHECK(mask_neurons(r, 0, Origin::kTop).units.empty());
  CHECK(mask_neurons(r, 8, Origin::kTop).units.size() == 8);
  CHECK(mask_neurons(r, 2, Origin::kTop).units == std::vector<std::size_t>{7, 2});
  CHECK(mask_neurons(r, 2, Origin::kBottom).units == std::vector<std::size_t>{6, 4});
  CHECK_THROWS_AS(mask_neurons(r, 9, Origin::kTop), ValidationError);
  for (std::size_t k = 0; 2 * k <= 8; ++k) {
    const auto top = mask_neurons(r, k, Origin::kTop).units, bottom = mask_neurons(r, k, Origin::kBottom).units;
    for (auto u : top) CHECK(std::find(bottom.begin(), bottom.end(), u) == bottom.end());
  }
}

TEST_CASE("apply_neuron_mask zeroes exactly the masked columns") {
  ActivationMatrix x(2, 2);
  x << 1, 2, 3, 4;
  ActivationMatrix expected(2, 2);
  expected << 1, 0, 3, 0;
  CHECK(bitwise_equal(apply_neuron_mask(x, mask_neurons(ranking_of({1, 0}), 1, Origin::kTop)), expected));

  const ActivationMatrix big = random_matrix(30, 6, 1).cast<float>();
  const auto r = ranking_of({4, 1, 5, 0, 2, 3});
  CHECK(bitwise_equal(apply_neuron_mask(big, mask_neurons(r, 0, Origin::kTop)), big));
  CHECK(apply_neuron_mask(big, mask_neurons(r, 6, Origin::kTop)).cwiseAbs().maxCoeff() == 0.0f);
  for (std::size_t k = 0; k <= 6; ++k) {
    const auto mask = mask_neurons(r, k, Origin::kBottom);
    const auto once = apply_neuron_mask(big, mask);
    CHECK(bitwise_equal(apply_neuron_mask(once, mask), once));
    for (Eigen::Index c = 0; c < 6; ++c) {
      const bool masked = std::find(mask.units.begin(), mask.units.end(), static_cast<std::size_t>(c)) != mask.units.end();
      if (masked) {
        CHECK(once.col(c).cwiseAbs().maxCoeff() == 0.0f);
      } else {
        CHECK(std::memcmp(&once(0, c), &big(0, c), sizeof(float)) == 0);
        CHECK(once.col(c) == big.col(c));
      }
    }
  }
  CHECK_THROWS_AS(apply_neuron_mask(random_matrix(3, 4, 1).cast<float>(), mask_neurons(r, 1, Origin::kTop)),
                  ValidationError);
}

TEST_CASE("svcca projection: symmetric, idempotent, rank c - k on random C") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = random_matrix(10, 6, seed);
    REQUIRE(fixtures::numeric_rank(c) == 6);
    for (std::size_t k = 0; k <= 6; ++k) {
      for (auto origin : {Origin::kTop, Origin::kBottom}) {
        const auto mask = svcca_projection(c, k, origin);
        const auto& p = mask.projection;
        CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK((p * p - p).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(fixtures::numeric_rank(p) == static_cast<Eigen::Index>(6 - k));
        const auto e = random_matrix(15, 10, seed + 99);
        const auto ep = apply_projection(e, mask);
        CHECK((apply_projection(ep, mask) - ep).cwiseAbs().maxCoeff() <= 1e-8 * e.cwiseAbs().maxCoeff());
      }
    }
  }
}

TEST_CASE("svcca projection: k = 0 on square C is the identity, k = c is zero") {
  const auto c = random_matrix(6, 6, 4);
  const auto id = svcca_projection(c, 0, Origin::kTop);
  CHECK((id.projection - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() <= 1e-8);
  const auto e = random_matrix(9, 6, 5);
  CHECK((apply_projection(e, id) - e).cwiseAbs().maxCoeff() <= 1e-8);
  const auto zero = svcca_projection(c, 6, Origin::kBottom);
  CHECK(apply_projection(e, zero).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(svcca_projection(c, 7, Origin::kTop), ValidationError);
}

TEST_CASE("svcca projection: top drops the leading columns") {
  // Axis-aligned C: dropping the first direction removes the first coordinate.
  const Eigen::MatrixXd c = Eigen::MatrixXd::Identity(4, 4);
  const auto top = svcca_projection(c, 1, Origin::kTop);
  CHECK(top.projection(0, 0) == doctest::Approx(0.0));
  CHECK(top.projection(3, 3) == doctest::Approx(1.0));
  const auto bottom = svcca_projection(c, 1, Origin::kBottom);
  CHECK(bottom.projection(3, 3) == doctest::Approx(0.0));
  CHECK(bottom.projection(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("svcca projection: singular retained directions fall back to a ridge and are flagged") {
  Eigen::MatrixXd c = random_matrix(8, 4, 6);
  c.col(3) = c.col(2);
  const auto mask = svcca_projection(c, 1, Origin::kBottom);  // keeps columns 0..2: fine
  CHECK_FALSE(mask.ridge_fallback);
  const auto flagged = svcca_projection(c, 1, Origin::kTop);  // keeps 1..3 with a duplicate
  CHECK(flagged.ridge_fallback);
}

TEST_CASE("k amounts: parsing and half-up percentages") {
  const auto ks = parse_ks("0, 5,10%,2.5%");
  REQUIRE(ks.size() == 4);
  CHECK(ks[2].percent);
  CHECK(ks[2].resolve(100) == 10);
  CHECK(ks[3].resolve(100) == 3);  // 2.5 rounds up
  CHECK((KSpec{50, true}.resolve(5)) == 3);
  CHECK((KSpec{25, true}.resolve(10)) == 3);
  CHECK(resolve_ks(parse_ks("10,5,5"), 20) == std::vector<std::size_t>{0, 5, 10});
  CHECK_THROWS_AS(parse_ks("3,x"), ValidationError);
  CHECK_THROWS_AS((KSpec{1.5, false}.resolve(10)), ValidationError);
  CHECK_THROWS_AS((KSpec{11, false}.resolve(10)), ValidationError);
}

TEST_CASE("erasure curves: constant scorer, single point, shared baseline") {
  const auto ds = fixtures::make_dataset({random_matrix(100, 10, 1), random_matrix(100, 10, 2)});
  const auto r = rank_maxcorr(ds, "m1");
  const auto flat = erasure_curve(ds, "m1", r, parse_ks("0,2,50%"), constant_scorer(3.5));
  REQUIRE(flat.top.size() == 3);
  for (const auto& p : flat.top) CHECK(p.score == 3.5);
  for (const auto& p : flat.bottom) CHECK(p.score == 3.5);
  CHECK(flat.top[2].k == 5);
  CHECK(flat.top[2].fraction == 0.5);

  const auto single = erasure_curve(ds, "m1", r, parse_ks("0"), linear_probe_scorer(random_matrix(100, 1, 3)));
  REQUIRE(single.top.size() == 1);
  CHECK(single.top[0].score == single.bottom[0].score);
  CHECK(single.top[0].k == 0);
  const auto auto_zero = erasure_curve(ds, "m1", r, parse_ks("3"), constant_scorer(1));
  CHECK(auto_zero.top.front().k == 0);
  for (std::size_t i = 1; i < auto_zero.top.size(); ++i) CHECK(auto_zero.top[i - 1].k < auto_zero.top[i].k);
}

TEST_CASE("erasure curves: scorer failures carry the offending k") {
  const auto ds = fixtures::make_dataset({random_matrix(50, 6, 1), random_matrix(50, 6, 2)});
  Scorer failing{"fails-late", [](const ActivationMatrix& x) -> double {
                   if (x.col(0).cwiseAbs().maxCoeff() == 0.0f) throw std::runtime_error("column 0 erased");
                   return 1.0;
                 }};
  auto r = ranking_of({1, 2, 3, 4, 5, 0});
  try {
    erasure_curve(ds, "m1", r, parse_ks("1,3,6"), failing);
    FAIL("should throw");
  } catch (const ScorerError& e) {
    CHECK(e.k() == 1);
    CHECK(e.origin() == Origin::kBottom);
  }
}

TEST_CASE("erasing planted neurons from the top hurts the latent probe more") {
  const auto result = generate(fixtures::recovery_spec());
  const auto& ds = result.dataset;
  const auto ranking = rank_maxcorr(ds, "m1");
  const auto scorer = linear_probe_scorer(result.truth.latents);
  std::vector<KSpec> ks;
  for (int k = 5; k < 100; k += 10) ks.push_back({static_cast<double>(k), false});
  ks.push_back({10, true});
  const auto curve = erasure_curve(ds, "m1", ranking, ks, scorer);
  CHECK(curve.top[0].score == curve.bottom[0].score);
  CHECK(curve.top[0].score > 0.95);
  for (std::size_t i = 1; i < curve.top.size(); ++i) CHECK(curve.top[i].score <= curve.bottom[i].score);
  const auto at10 = std::find_if(curve.top.begin(), curve.top.end(), [](const CurvePoint& p) { return p.k == 10; });
  REQUIRE(at10 != curve.top.end());
  CHECK(at10->score < 0.1);
}

TEST_CASE("svcca direction erasure lifts back to the original neurons") {
  const Eigen::Index t = 3000;
  const auto z = random_matrix(t, 2, 1);
  Eigen::MatrixXd a = random_matrix(t, 8, 2), b = random_matrix(t, 8, 3);
  a.leftCols(2) = 3.0 * z + 0.1 * random_matrix(t, 2, 4);
  b.rightCols(2) = 3.0 * z + 0.1 * random_matrix(t, 2, 5);
  const auto ds = fixtures::make_dataset({a, b});
  const auto dirs = rank_svcca(ds, "m1", "m2");
  const auto curve = svcca_erasure_curve(ds, dirs, parse_ks("0,1,2,4"), linear_probe_scorer(z));
  CHECK(curve.dimension == dirs.size());
  CHECK(curve.top[0].score > 0.99);
  const auto at2 = std::find_if(curve.top.begin(), curve.top.end(), [](const CurvePoint& p) { return p.k == 2; });
  CHECK(at2->score < 0.05);
  CHECK(curve.bottom[2].score > 0.99);

  const auto id = svcca_projection(dirs.basis.projection_a, 0, Origin::kTop);
  const auto lifted = apply_projection_original(ds.model("m1").activations, dirs.pca_a, id);
  const Eigen::MatrixXd x = ds.model("m1").to_double();
  const Eigen::MatrixXd recon = (dirs.pca_a.project(x) * dirs.pca_a.components.transpose()).rowwise() +
                                dirs.pca_a.mean.transpose();
  CHECK((lifted.cast<double>() - recon).cwiseAbs().maxCoeff() < 1e-4);
}
