// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/retrieval_eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gea/trainer.hpp"

namespace gea {

namespace {

void check_inputs(const std::vector<Eigen::VectorXd>& scores,
                  const std::vector<std::vector<bool>>& relevance) {
  if (scores.empty()) throw ValidationError("retrieval: empty query set");
  if (relevance.size() != scores.size())
    throw ValidationError("retrieval: relevance size mismatch");
  const Eigen::Index gallery = scores[0].size();
  if (gallery == 0) throw ValidationError("retrieval: empty gallery");
  for (size_t q = 0; q < scores.size(); ++q) {
    if (scores[q].size() != gallery ||
        relevance[q].size() != static_cast<size_t>(gallery))
      throw ValidationError("retrieval: ragged score/relevance rows");
    if (std::none_of(relevance[q].begin(), relevance[q].end(),
                     [](bool b) { return b; }))
      throw ValidationError("retrieval: query " + std::to_string(q) +
                            " has no positive gallery item");
  }
}

// Gallery indices sorted by score descending, lower index first on ties.
std::vector<int> ranking(const Eigen::VectorXd& row) {
  std::vector<int> order(static_cast<size_t>(row.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&row](int a, int b) { return row[a] > row[b]; });
  return order;
}

}  // namespace

std::vector<double> rank_k(const std::vector<Eigen::VectorXd>& scores,
                           const std::vector<std::vector<bool>>& relevance,
                           const std::vector<int>& ks) {
  check_inputs(scores, relevance);
  const int gallery = static_cast<int>(scores[0].size());
  for (int k : ks)
    if (k < 1 || k > gallery)
      throw ValidationError("rank_k: k = " + std::to_string(k) +
                            " outside gallery size " + std::to_string(gallery));

  std::vector<int> first_hits;
  first_hits.reserve(scores.size());
  for (size_t q = 0; q < scores.size(); ++q) {
    const auto order = ranking(scores[q]);
    for (size_t pos = 0; pos < order.size(); ++pos) {
      if (relevance[q][static_cast<size_t>(order[pos])]) {
        first_hits.push_back(static_cast<int>(pos));
        break;
      }
    }
  }

  std::vector<double> out;
  out.reserve(ks.size());
  for (int k : ks) {
    int hits = 0;
    for (int pos : first_hits)
      if (pos < k) ++hits;
    out.push_back(100.0 * hits / static_cast<double>(first_hits.size()));
  }
  return out;
}

double mean_average_precision(
    const std::vector<Eigen::VectorXd>& scores,
    const std::vector<std::vector<bool>>& relevance) {
  check_inputs(scores, relevance);
  double sum_ap = 0.0;
  for (size_t q = 0; q < scores.size(); ++q) {
    const auto order = ranking(scores[q]);
    int positives_seen = 0;
    double ap = 0.0;
    for (size_t pos = 0; pos < order.size(); ++pos) {
      if (relevance[q][static_cast<size_t>(order[pos])]) {
        ++positives_seen;
        ap += static_cast<double>(positives_seen) /
              static_cast<double>(pos + 1);
      }
    }
    sum_ap += ap / positives_seen;
  }
  return sum_ap / static_cast<double>(scores.size());
}

RetrievalReport make_report(const std::vector<Eigen::VectorXd>& scores,
                            const std::vector<std::vector<bool>>& relevance,
                            const std::string& config_digest) {
  RetrievalReport report;
  // Rank-k saturates at the gallery size: every query has a positive, so a
  // cutoff spanning the whole gallery always hits.
  const int gallery = scores.empty() ? 0 : static_cast<int>(scores[0].size());
  const auto ranks = rank_k(scores, relevance,
                            {std::min(1, gallery), std::min(5, gallery),
                             std::min(10, gallery)});
  report.rank1 = ranks[0];
  report.rank5 = ranks[1];
  report.rank10 = ranks[2];
  report.map = mean_average_precision(scores, relevance);
  report.num_queries = static_cast<int>(scores.size());
  report.num_gallery = static_cast<int>(scores[0].size());
  report.config_digest = config_digest;
  for (size_t q = 0; q < scores.size(); ++q) {
    const auto order = ranking(scores[q]);
    for (size_t pos = 0; pos < order.size(); ++pos)
      if (relevance[q][static_cast<size_t>(order[pos])]) {
        report.per_query_ranks.push_back(static_cast<int>(pos) + 1);
        break;
      }
  }
  return report;
}

RetrievalReport evaluate(const DatasetManifest& manifest,
                         const ModelState& model, double omega,
                         bool use_fused_rerank) {
  if (manifest.split == Split::kTrain)
    throw ValidationError("evaluate: manifest split must be val or test");
  return evaluate_with_model(manifest, model, omega, use_fused_rerank);
}

void write_report_json(const RetrievalReport& report,
                       const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["rank1"] = report.rank1;
  doc["rank5"] = report.rank5;
  doc["rank10"] = report.rank10;
  doc["map"] = report.map;
  doc["per_query_ranks"] = report.per_query_ranks;
  doc["num_queries"] = report.num_queries;
  doc["num_gallery"] = report.num_gallery;
  doc["config_digest"] = report.config_digest;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string format_report_table(const RetrievalReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "Metric  Value\n";
  os << "R-1     " << report.rank1 << "\n";
  os << "R-5     " << report.rank5 << "\n";
  os << "R-10    " << report.rank10 << "\n";
  os << "mAP     " << report.map * 100.0 << "\n";
  return os.str();
}

}  // namespace gea
