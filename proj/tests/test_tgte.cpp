// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gea/tgte.hpp"
#include "test_util.hpp"

using namespace gea;

TEST_SUITE("tgte") {

TEST_CASE("mix endpoints reproduce inputs bit-level") {
  RandomSource rng(1);
  const Eigen::VectorXd t = testutil::random_vector(32, rng);
  const Eigen::VectorXd g = testutil::random_vector(32, rng);
  const Eigen::VectorXd at0 = mix_tokens(t, g, 0.0);
  const Eigen::VectorXd at1 = mix_tokens(t, g, 1.0);
  for (int i = 0; i < 32; ++i) {
    CHECK(at0[i] == t[i]);
    CHECK(at1[i] == g[i]);
  }
}

TEST_CASE("mix arithmetic matches the convex combination") {
  Eigen::VectorXd t(2), g(2);
  t << 1.0, 0.0;
  g << 0.0, 1.0;
  const Eigen::VectorXd mixed = mix_tokens(t, g, 0.6);
  CHECK(mixed[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(mixed[1] == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("mix rejects bad inputs") {
  Eigen::VectorXd t(2), g(3);
  t.setOnes();
  g.setOnes();
  CHECK_THROWS_AS(mix_tokens(t, g, 0.5), ValidationError);
  Eigen::VectorXd g2(2);
  g2.setOnes();
  CHECK_THROWS_AS(mix_tokens(t, g2, -0.1), ValidationError);
  CHECK_THROWS_AS(mix_tokens(t, g2, 1.1), ValidationError);
}

TEST_CASE("mix is exactly linear in omega") {
  RandomSource rng(2);
  const Eigen::VectorXd t = testutil::random_vector(16, rng);
  const Eigen::VectorXd g = testutil::random_vector(16, rng);
  for (int iter = 0; iter < 20; ++iter) {
    const double w1 = rng.uniform();
    const double w2 = rng.uniform();
    const Eigen::VectorXd lhs =
        mix_tokens(t, g, w1) + mix_tokens(t, g, w2);
    const Eigen::VectorXd rhs = 2.0 * mix_tokens(t, g, 0.5 * (w1 + w2));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("omega schedule endpoints and monotonicity") {
  MixSchedule sched;  // 0.3 -> 0.6 over 60 epochs
  CHECK(omega_at(sched, 0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(omega_at(sched, 59) == doctest::Approx(0.6).epsilon(1e-15));
  // Midpoint of the linear form: epochs 29 and 30 straddle 0.45 by half a
  // step each.
  const double step = 0.3 / 59.0;
  CHECK(omega_at(sched, 29) == doctest::Approx(0.45 - step / 2).epsilon(1e-12));
  CHECK(omega_at(sched, 30) == doctest::Approx(0.45 + step / 2).epsilon(1e-12));
  double prev = -1.0;
  for (int e = 0; e < 60; ++e) {
    const double w = omega_at(sched, e);
    CHECK(w >= prev);
    prev = w;
  }
  CHECK_THROWS_AS(omega_at(sched, -1), ValidationError);
  CHECK_THROWS_AS(omega_at(sched, 60), ValidationError);
}

TEST_CASE("cosine similarity basics") {
  Eigen::VectorXd u(3), v(3);
  u << 1, 2, 3;
  CHECK(cosine_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-14));

  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0).epsilon(1e-15));

  Eigen::VectorXd c(2);
  c << 1, 1;
  CHECK(cosine_similarity(c, a) == doctest::Approx(0.70710678).epsilon(1e-4));

  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(cosine_similarity(zero, a), NumericError);
}

TEST_CASE("cosine gradient matches finite differences") {
  RandomSource rng(5);
  Eigen::VectorXd u = testutil::random_vector(6, rng);
  Eigen::VectorXd v = testutil::random_vector(6, rng);
  const Eigen::VectorXd grad = cosine_similarity_grad_u(u, v);
  for (int i = 0; i < 6; ++i) {
    const double fd = testutil::central_diff(
        [&]() { return u.dot(v) / (u.norm() * v.norm()); }, &u[i]);
    CHECK(testutil::rel_error(grad[i], fd) < 1e-6);
  }
}

TEST_CASE("similarity matrix trivial shapes") {
  std::vector<IdentityLabel> ids = {{0}, {1}, {2}};

  SUBCASE("identical normalized vectors give all ones") {
    Eigen::VectorXd v(3);
    v << 1, 2, 2;
    v.normalize();
    std::vector<Eigen::VectorXd> side(3, v);
    const SimilarityMatrix sim = similarity_matrix(side, side, ids, ids);
    CHECK((sim.scores.array() - 1.0).abs().maxCoeff() < 1e-12);
  }

  SUBCASE("orthonormal basis against itself gives identity") {
    std::vector<Eigen::VectorXd> basis;
    for (int i = 0; i < 3; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(3);
      e[i] = 1.0;
      basis.push_back(e);
    }
    const SimilarityMatrix sim = similarity_matrix(basis, basis, ids, ids);
    CHECK((sim.scores - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs()
              .maxCoeff() < 1e-15);
  }
}

TEST_CASE("similarity matrix matches elementwise cosine calls") {
  RandomSource rng(7);
  std::vector<Eigen::VectorXd> images, texts;
  std::vector<IdentityLabel> ids;
  for (int i = 0; i < 4; ++i) {
    images.push_back(testutil::random_vector(8, rng));
    texts.push_back(testutil::random_vector(8, rng));
    ids.push_back({i});
  }
  const SimilarityMatrix sim = similarity_matrix(images, texts, ids, ids);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(sim.scores(i, j) ==
            doctest::Approx(cosine_similarity(images[static_cast<size_t>(i)],
                                              texts[static_cast<size_t>(j)]))
                .epsilon(1e-15));
}

TEST_CASE("similarity matrix is invariant to positive rescaling") {
  RandomSource rng(9);
  std::vector<Eigen::VectorXd> images, texts, scaled;
  std::vector<IdentityLabel> ids;
  for (int i = 0; i < 5; ++i) {
    images.push_back(testutil::random_vector(6, rng));
    texts.push_back(testutil::random_vector(6, rng));
    scaled.push_back(images.back() * (0.5 + 10.0 * rng.uniform()));
    ids.push_back({i});
  }
  const SimilarityMatrix a = similarity_matrix(images, texts, ids, ids);
  const SimilarityMatrix b = similarity_matrix(scaled, texts, ids, ids);
  CHECK((a.scores - b.scores).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.scores.maxCoeff() <= 1.0);
  CHECK(a.scores.minCoeff() >= -1.0);
}

TEST_CASE("omega 0 pipeline collapses to the no-generation baseline") {
  RandomSource rng(11);
  std::vector<Eigen::VectorXd> images, texts, generated, mixed;
  std::vector<IdentityLabel> ids;
  for (int i = 0; i < 6; ++i) {
    images.push_back(testutil::random_vector(12, rng));
    texts.push_back(testutil::random_vector(12, rng));
    generated.push_back(testutil::random_vector(12, rng));
    mixed.push_back(mix_tokens(texts.back(), generated.back(), 0.0));
    ids.push_back({i});
  }
  const SimilarityMatrix with_mix = similarity_matrix(images, mixed, ids, ids);
  const SimilarityMatrix baseline = similarity_matrix(images, texts, ids, ids);
  CHECK((with_mix.scores - baseline.scores).cwiseAbs().maxCoeff() < 1e-12);
}

}  // TEST_SUITE
