// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gea/retrieval_eval.hpp"
#include "test_util.hpp"

using namespace gea;

namespace {

struct Instance {
  std::vector<Eigen::VectorXd> scores;
  std::vector<std::vector<bool>> relevance;
};

Instance random_instance(int queries, int gallery, RandomSource& rng) {
  Instance inst;
  for (int q = 0; q < queries; ++q) {
    inst.scores.push_back(testutil::random_vector(gallery, rng));
    std::vector<bool> rel(static_cast<size_t>(gallery), false);
    int positives = 0;
    for (int g = 0; g < gallery; ++g) {
      rel[static_cast<size_t>(g)] = rng.uniform() < 0.3;
      positives += rel[static_cast<size_t>(g)] ? 1 : 0;
    }
    if (positives == 0) rel[rng.uniform_int(static_cast<size_t>(gallery))] = true;
    inst.relevance.push_back(rel);
  }
  return inst;
}

}  // namespace

TEST_SUITE("retrieval_eval") {

TEST_CASE("perfect retrieval scores rank-1 = 100 and mAP = 1") {
  // Each query's sole positive has the strictly highest score.
  Instance inst;
  for (int q = 0; q < 4; ++q) {
    Eigen::VectorXd s(4);
    for (int g = 0; g < 4; ++g) s[g] = g == q ? 0.9 : 0.1 * g / 4.0;
    inst.scores.push_back(s);
    std::vector<bool> rel(4, false);
    rel[static_cast<size_t>(q)] = true;
    inst.relevance.push_back(rel);
  }
  const auto ranks = rank_k(inst.scores, inst.relevance, {1});
  CHECK(ranks[0] == doctest::Approx(100.0));
  CHECK(mean_average_precision(inst.scores, inst.relevance) ==
        doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("positive at rank 6 misses rank-5 but hits rank-10") {
  Eigen::VectorXd s(10);
  s << 10, 9, 8, 7, 6, 5, 4, 3, 2, 1;
  std::vector<bool> rel(10, false);
  rel[5] = true;  // 6th by score
  const auto ranks = rank_k({s}, {rel}, {5, 10});
  CHECK(ranks[0] == doctest::Approx(0.0));
  CHECK(ranks[1] == doctest::Approx(100.0));
}

TEST_CASE("single positive at rank 2 of 2 gives mAP = 0.5") {
  Eigen::VectorXd s(2);
  s << 0.9, 0.1;
  std::vector<bool> rel = {false, true};
  CHECK(mean_average_precision({s}, {rel}) ==
        doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("query with no positive is a labeled error") {
  Eigen::VectorXd s(3);
  s << 1, 2, 3;
  std::vector<bool> rel(3, false);
  CHECK_THROWS_AS(rank_k({s}, {rel}, {1}), ValidationError);
  CHECK_THROWS_AS(mean_average_precision({s}, {rel}), ValidationError);
}

TEST_CASE("k beyond the gallery size is rejected") {
  Eigen::VectorXd s(3);
  s << 1, 2, 3;
  std::vector<bool> rel = {true, false, false};
  CHECK_THROWS_AS(rank_k({s}, {rel}, {4}), ValidationError);
  CHECK_THROWS_AS(rank_k({s}, {rel}, {0}), ValidationError);
}

TEST_CASE("matches brute-force oracles on 50 random 8x8 instances") {
  RandomSource rng(17);
  for (int iter = 0; iter < 50; ++iter) {
    const Instance inst = random_instance(8, 8, rng);
    const auto ranks = rank_k(inst.scores, inst.relevance, {1, 5, 8});
    CHECK(ranks[0] ==
          testutil::oracle::rank_k_reference(inst.scores, inst.relevance, 1));
    CHECK(ranks[1] ==
          testutil::oracle::rank_k_reference(inst.scores, inst.relevance, 5));
    CHECK(ranks[2] ==
          testutil::oracle::rank_k_reference(inst.scores, inst.relevance, 8));
    CHECK(mean_average_precision(inst.scores, inst.relevance) ==
          doctest::Approx(testutil::oracle::map_reference(
                              inst.scores, inst.relevance))
              .epsilon(1e-12));
  }
}

TEST_CASE("ties break toward the lower gallery index") {
  Eigen::VectorXd s(3);
  s << 0.5, 0.5, 0.5;
  std::vector<bool> rel = {false, true, false};
  // Sorted order is 0, 1, 2, so the first hit sits at position 1.
  const auto report = make_report({s}, {rel}, "");
  REQUIRE(report.per_query_ranks.size() == 1);
  CHECK(report.per_query_ranks[0] == 2);  // 1-based
}

TEST_CASE("rank-k is nondecreasing in k") {
  RandomSource rng(18);
  const Instance inst = random_instance(6, 12, rng);
  const auto ranks = rank_k(inst.scores, inst.relevance, {1, 2, 5, 10, 12});
  for (size_t i = 1; i < ranks.size(); ++i) CHECK(ranks[i] >= ranks[i - 1]);
}

TEST_CASE("gallery permutation leaves tie-free metrics unchanged") {
  RandomSource rng(19);
  const Instance inst = random_instance(5, 9, rng);  // continuous => tie-free
  std::vector<int> perm = {4, 7, 0, 8, 2, 6, 1, 5, 3};

  Instance permuted;
  for (size_t q = 0; q < inst.scores.size(); ++q) {
    Eigen::VectorXd s(9);
    std::vector<bool> rel(9);
    for (int g = 0; g < 9; ++g) {
      s[g] = inst.scores[q][perm[static_cast<size_t>(g)]];
      rel[static_cast<size_t>(g)] =
          inst.relevance[q][static_cast<size_t>(perm[static_cast<size_t>(g)])];
    }
    permuted.scores.push_back(s);
    permuted.relevance.push_back(rel);
  }

  const auto a = rank_k(inst.scores, inst.relevance, {1, 5});
  const auto b = rank_k(permuted.scores, permuted.relevance, {1, 5});
  CHECK(a == b);
  CHECK(mean_average_precision(inst.scores, inst.relevance) ==
        doctest::Approx(mean_average_precision(permuted.scores,
                                               permuted.relevance))
            .epsilon(1e-14));
}

TEST_CASE("mAP reaches 1 only when every positive outranks every negative") {
  Eigen::VectorXd s(4);
  s << 0.9, 0.8, 0.2, 0.1;
  std::vector<bool> all_top = {true, true, false, false};
  CHECK(mean_average_precision({s}, {all_top}) ==
        doctest::Approx(1.0).epsilon(1e-15));
  std::vector<bool> split = {true, false, true, false};
  CHECK(mean_average_precision({s}, {split}) < 1.0);
}

TEST_CASE("report validates the rank ordering invariant") {
  RandomSource rng(20);
  const Instance inst = random_instance(6, 10, rng);
  const RetrievalReport report = make_report(inst.scores, inst.relevance, "d");
  CHECK(report.rank1 <= report.rank5);
  CHECK(report.rank5 <= report.rank10);
  CHECK(report.rank10 <= 100.0);
  CHECK(report.map >= 0.0);
  CHECK(report.map <= 1.0);
  CHECK(report.num_queries == 6);
  CHECK(report.num_gallery == 10);
  CHECK(report.config_digest == "d");
  CHECK(report.per_query_ranks.size() == 6);
}

}  // TEST_SUITE
