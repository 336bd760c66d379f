// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/tal_loss.hpp"

#include <cmath>
#include <string>

namespace gea {

namespace {

// Hinge [x]_+.
inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

// tau * log sum_j exp(row_j / tau), max-subtracted.
double scaled_lse(const Eigen::VectorXd& row, double tau) {
  const double m = row.maxCoeff();
  double acc = 0.0;
  for (Eigen::Index j = 0; j < row.size(); ++j)
    acc += std::exp((row[j] - m) / tau);
  return m + tau * std::log(acc);
}

std::vector<bool> positive_mask(const SimilarityMatrix& sim, Direction dir,
                                int index, const TALConfig& config) {
  const int K = sim.batch_size();
  std::vector<bool> mask(static_cast<size_t>(K), false);
  const bool all =
      config.positive_restriction == TALConfig::PositiveRestriction::kAllPairs;
  for (int k = 0; k < K; ++k) {
    const bool pos = dir == Direction::kImageToText ? sim.is_positive(index, k)
                                                    : sim.is_positive(k, index);
    mask[static_cast<size_t>(k)] = all || pos;
  }
  return mask;
}

Eigen::VectorXd direction_row(const SimilarityMatrix& sim, Direction dir,
                              int index) {
  return dir == Direction::kImageToText
             ? Eigen::VectorXd(sim.scores.row(index).transpose())
             : Eigen::VectorXd(sim.scores.col(index));
}

}  // namespace

void TALConfig::validate() const {
  if (margin <= 0.0) throw ValidationError("TALConfig: margin must be > 0");
  if (temperature <= 0.0)
    throw ValidationError("TALConfig: temperature must be > 0");
}

void SimilarityMatrix::validate() const {
  const int K = batch_size();
  if (K < 1) throw ValidationError("SimilarityMatrix: empty batch");
  if (scores.cols() != K)
    throw ValidationError("SimilarityMatrix: matrix must be square");
  if (image_ids.size() != static_cast<size_t>(K) ||
      text_ids.size() != static_cast<size_t>(K))
    throw ValidationError("SimilarityMatrix: label count mismatch");
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      const double s = scores(i, j);
      if (!std::isfinite(s) || s < -1.0 || s > 1.0)
        throw ValidationError("SimilarityMatrix: entry (" + std::to_string(i) +
                              ", " + std::to_string(j) +
                              ") outside [-1, 1]: " + std::to_string(s));
    }
  for (int i = 0; i < K; ++i) {
    bool row_pos = false, col_pos = false;
    for (int j = 0; j < K; ++j) {
      row_pos = row_pos || is_positive(i, j);
      col_pos = col_pos || is_positive(j, i);
    }
    if (!row_pos)
      throw ValidationError("SimilarityMatrix: image row " + std::to_string(i) +
                            " (identity " +
                            std::to_string(image_ids[static_cast<size_t>(i)].id) +
                            ") has no positive text");
    if (!col_pos)
      throw ValidationError("SimilarityMatrix: text column " +
                            std::to_string(i) + " (identity " +
                            std::to_string(text_ids[static_cast<size_t>(i)].id) +
                            ") has no positive image");
  }
}

Eigen::VectorXd softmax_weights(const Eigen::VectorXd& row,
                                const std::vector<bool>& mask, double tau) {
  if (tau <= 0.0) throw ValidationError("softmax_weights: tau must be > 0");
  if (mask.size() != static_cast<size_t>(row.size()))
    throw ValidationError("softmax_weights: mask size mismatch");

  double max_val = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < row.size(); ++j)
    if (mask[static_cast<size_t>(j)]) max_val = std::max(max_val, row[j]);
  if (!std::isfinite(max_val))
    throw ValidationError("softmax_weights: mask selects no entries");

  Eigen::VectorXd weights = Eigen::VectorXd::Zero(row.size());
  double denom = 0.0;
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    if (!mask[static_cast<size_t>(j)]) continue;
    const double e = std::exp((row[j] - max_val) / tau);
    weights[j] = e;
    denom += e;
  }
  weights /= denom;
  return weights;
}

Eigen::VectorXd positive_aggregate(const SimilarityMatrix& sim, Direction dir,
                                   const TALConfig& config) {
  config.validate();
  sim.validate();
  const int K = sim.batch_size();
  Eigen::VectorXd out(K);
  for (int i = 0; i < K; ++i) {
    const Eigen::VectorXd row = direction_row(sim, dir, i);
    const auto mask = positive_mask(sim, dir, i, config);
    const Eigen::VectorXd alpha =
        softmax_weights(row, mask, config.temperature);
    out[i] = alpha.dot(row);
  }
  return out;
}

double tal(const SimilarityMatrix& sim, const TALConfig& config) {
  return tal_with_grad(sim, config).loss;
}

TALGradient tal_with_grad(const SimilarityMatrix& sim,
                          const TALConfig& config) {
  config.validate();
  sim.validate();
  const int K = sim.batch_size();
  const double tau = config.temperature;

  TALGradient result;
  result.d_scores = Eigen::MatrixXd::Zero(K, K);
  double loss = 0.0;

  for (Direction dir : {Direction::kImageToText, Direction::kTextToImage}) {
    for (int i = 0; i < K; ++i) {
      const Eigen::VectorXd row = direction_row(sim, dir, i);
      const auto mask = positive_mask(sim, dir, i, config);
      const Eigen::VectorXd alpha = softmax_weights(row, mask, tau);
      const double s_pos = alpha.dot(row);
      const double lse = scaled_lse(row, tau);
      const double z = config.margin - s_pos + lse;
      loss += hinge(z);
      if (z <= 0.0) continue;

      // d lse / d row = softmax over the full row; d s_pos / d row_k =
      // alpha_k (1 + (row_k - s_pos) / tau) on the selected set.
      const std::vector<bool> all_mask(static_cast<size_t>(K), true);
      const Eigen::VectorXd p = softmax_weights(row, all_mask, tau);
      for (int k = 0; k < K; ++k) {
        double g = p[k];
        if (mask[static_cast<size_t>(k)])
          g -= alpha[k] * (1.0 + (row[k] - s_pos) / tau);
        g /= K;  // batch mean
        if (dir == Direction::kImageToText)
          result.d_scores(i, k) += g;
        else
          result.d_scores(k, i) += g;
      }
    }
  }

  result.loss = loss / K;
  return result;
}

double total_loss(const SimilarityMatrix& sim_global,
                  const SimilarityMatrix& sim_fused, const TALConfig& config) {
  if (sim_global.batch_size() != sim_fused.batch_size())
    throw ValidationError("total_loss: batch size mismatch");
  return tal(sim_global, config) + tal(sim_fused, config);
}

}  // namespace gea
