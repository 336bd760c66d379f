// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "gea/feature_store.hpp"

namespace gea {

struct ModelState;  // trainer.hpp

// Text-to-image retrieval metrics for one evaluation run. Rank values are
// percentages; map is a fraction in [0, 1] (printed as a percentage).
// per_query_ranks holds the 1-based rank of each query's first correct hit.
struct RetrievalReport {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double map = 0.0;
  std::vector<int> per_query_ranks;
  int num_queries = 0;
  int num_gallery = 0;
  std::string config_digest;
};

// Rank-k percentages for each k. scores[q] holds the gallery scores of query
// q; relevance[q][g] marks gallery item g as a correct match. Ties break
// deterministically toward the lower gallery index.
std::vector<double> rank_k(const std::vector<Eigen::VectorXd>& scores,
                           const std::vector<std::vector<bool>>& relevance,
                           const std::vector<int>& ks);

// Full-ranking mean average precision over all positives of every query.
double mean_average_precision(
    const std::vector<Eigen::VectorXd>& scores,
    const std::vector<std::vector<bool>>& relevance);

// Assembles a report (Rank-1/5/10, mAP, first-hit ranks) from a scored run.
RetrievalReport make_report(const std::vector<Eigen::VectorXd>& scores,
                            const std::vector<std::vector<bool>>& relevance,
                            const std::string& config_digest);

// Encodes gallery images and text queries with the model, applies token
// mixing at the given omega (falling back to omega = 0 for queries without a
// generated feature), and scores the full query x gallery matrix.
// use_fused_rerank adds the fused-branch similarity on top of the global
// score before ranking.
RetrievalReport evaluate(const DatasetManifest& manifest,
                         const ModelState& model, double omega,
                         bool use_fused_rerank);

void write_report_json(const RetrievalReport& report,
                       const std::filesystem::path& path);

// Fixed-format metric table (name, value to 2 decimals).
std::string format_report_table(const RetrievalReport& report);

}  // namespace gea
