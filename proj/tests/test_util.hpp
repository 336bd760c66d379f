// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit and acceptance suites. The oracle namespace
// holds independent reference transcriptions (plain loops, no shared code
// with the library) used to cross-check the production implementations.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gea/common.hpp"

namespace testutil {

// Gradient-check metric: |a - b| / max(floor, |a|, |b|). The floor keeps
// finite-difference round-off on near-zero entries from reading as a huge
// relative error.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

// Central finite difference of a scalar function w.r.t. one coordinate that
// the callable reads through the given pointer.
inline double central_diff(const std::function<double()>& f, double* coord,
                           double h = 1e-5) {
  const double saved = *coord;
  *coord = saved + h;
  const double f_plus = f();
  *coord = saved - h;
  const double f_minus = f();
  *coord = saved;
  return (f_plus - f_minus) / (2.0 * h);
}

// Unique scratch directory under the system temp root, removed on scope
// exit.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gea_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline Eigen::MatrixXd random_matrix(int rows, int cols, gea::RandomSource& rng,
                                     double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline Eigen::VectorXd random_vector(int n, gea::RandomSource& rng,
                                     double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

namespace oracle {

// Direct softmax over the masked entries, long-double accumulation, no
// max subtraction (inputs stay in a safe exponent range).
inline std::vector<double> softmax_masked(const std::vector<double>& row,
                                          const std::vector<bool>& mask,
                                          double tau) {
  long double denom = 0.0L;
  std::vector<long double> e(row.size(), 0.0L);
  for (size_t j = 0; j < row.size(); ++j) {
    if (!mask[j]) continue;
    e[j] = std::exp(static_cast<long double>(row[j]) / tau);
    denom += e[j];
  }
  std::vector<double> out(row.size(), 0.0);
  for (size_t j = 0; j < row.size(); ++j)
    if (mask[j]) out[j] = static_cast<double>(e[j] / denom);
  return out;
}

// Literal per-pair transcription of the triplet alignment loss: for each
// sample i, hinge(m - Spos_i2t + tau log sum_j exp(S_ij / tau)) plus the
// text-to-image mirror, averaged over the batch.
inline double tal_reference(const Eigen::MatrixXd& s,
                            const std::vector<int>& image_ids,
                            const std::vector<int>& text_ids, double m,
                            double tau, bool positives_only) {
  const int k = static_cast<int>(s.rows());
  long double total = 0.0L;
  for (int i = 0; i < k; ++i) {
    // image -> text over row i
    {
      long double denom_pos = 0.0L, num_pos = 0.0L, lse = 0.0L;
      for (int j = 0; j < k; ++j) {
        const long double e = std::exp(static_cast<long double>(s(i, j)) / tau);
        lse += e;
        if (!positives_only || image_ids[i] == text_ids[j]) {
          denom_pos += e;
          num_pos += e * s(i, j);
        }
      }
      const long double s_pos = num_pos / denom_pos;
      const long double z = m - s_pos + tau * std::log(lse);
      if (z > 0.0L) total += z;
    }
    // text -> image over column i
    {
      long double denom_pos = 0.0L, num_pos = 0.0L, lse = 0.0L;
      for (int j = 0; j < k; ++j) {
        const long double e = std::exp(static_cast<long double>(s(j, i)) / tau);
        lse += e;
        if (!positives_only || image_ids[j] == text_ids[i]) {
          denom_pos += e;
          num_pos += e * s(j, i);
        }
      }
      const long double s_pos = num_pos / denom_pos;
      const long double z = m - s_pos + tau * std::log(lse);
      if (z > 0.0L) total += z;
    }
  }
  return static_cast<double>(total / k);
}

// Direct transcription of scaled-dot-product attention with learned
// projections, single head: softmax(Q Kt / sqrt(d)) V, then the output
// projection.
inline Eigen::MatrixXd cross_attention_reference(
    const Eigen::MatrixXd& q_seq, const Eigen::MatrixXd& k_seq,
    const Eigen::MatrixXd& v_seq, const Eigen::MatrixXd& w_q,
    const Eigen::MatrixXd& w_k, const Eigen::MatrixXd& w_v,
    const Eigen::MatrixXd& w_o) {
  const Eigen::MatrixXd q = q_seq * w_q;
  const Eigen::MatrixXd k = k_seq * w_k;
  const Eigen::MatrixXd v = v_seq * w_v;
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Eigen::MatrixXd out(q.rows(), v.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<long double> e(static_cast<size_t>(k.rows()));
    long double denom = 0.0L;
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      e[static_cast<size_t>(j)] =
          std::exp(static_cast<long double>(scale * q.row(i).dot(k.row(j))));
      denom += e[static_cast<size_t>(j)];
    }
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(v.cols());
    for (Eigen::Index j = 0; j < k.rows(); ++j)
      acc += static_cast<double>(e[static_cast<size_t>(j)] / denom) *
             v.row(j).transpose();
    out.row(i) = acc.transpose();
  }
  return out * w_o;
}

// Exhaustive-sort ranking oracle. Returns, per query, the 0-based position
// of the first relevant item (ties resolved toward the lower gallery index).
inline std::vector<int> first_hit_positions(
    const std::vector<Eigen::VectorXd>& scores,
    const std::vector<std::vector<bool>>& relevance) {
  std::vector<int> out;
  for (size_t q = 0; q < scores.size(); ++q) {
    std::vector<int> order(static_cast<size_t>(scores[q].size()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[q][a] != scores[q][b]) return scores[q][a] > scores[q][b];
      return a < b;
    });
    for (size_t pos = 0; pos < order.size(); ++pos)
      if (relevance[q][static_cast<size_t>(order[pos])]) {
        out.push_back(static_cast<int>(pos));
        break;
      }
  }
  return out;
}

inline double rank_k_reference(const std::vector<Eigen::VectorXd>& scores,
                               const std::vector<std::vector<bool>>& relevance,
                               int k) {
  const auto hits = first_hit_positions(scores, relevance);
  int count = 0;
  for (int pos : hits)
    if (pos < k) ++count;
  return 100.0 * count / static_cast<double>(hits.size());
}

// Definition-transcription mAP: AP = mean over positives of
// (positives ranked at or above it) / rank.
inline double map_reference(const std::vector<Eigen::VectorXd>& scores,
                            const std::vector<std::vector<bool>>& relevance) {
  long double total = 0.0L;
  for (size_t q = 0; q < scores.size(); ++q) {
    std::vector<int> order(static_cast<size_t>(scores[q].size()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[q][a] != scores[q][b]) return scores[q][a] > scores[q][b];
      return a < b;
    });
    long double ap = 0.0L;
    int seen = 0;
    for (size_t pos = 0; pos < order.size(); ++pos) {
      if (relevance[q][static_cast<size_t>(order[pos])]) {
        ++seen;
        ap += static_cast<long double>(seen) / static_cast<long double>(pos + 1);
      }
    }
    total += ap / seen;
  }
  return static_cast<double>(total / scores.size());
}

}  // namespace oracle
}  // namespace testutil
