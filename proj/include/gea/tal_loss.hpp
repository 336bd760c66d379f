// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <vector>

#include "gea/feature_store.hpp"

namespace gea {

// Triplet alignment hyperparameters. positive_restriction selects the set
// the softmax weights normalize over; the hinge log-sum-exp always runs over
// the full batch.
struct TALConfig {
  double margin = 0.1;
  double temperature = 0.015;
  enum class PositiveRestriction { kPositivesOnly, kAllPairs };
  PositiveRestriction positive_restriction =
      PositiveRestriction::kPositivesOnly;

  void validate() const;
};

// K x K batch of image-text similarities with the identity labels of both
// axes. Entry (i, j) scores image i against text j; (i, j) is a positive
// pair iff the labels match.
struct SimilarityMatrix {
  Eigen::MatrixXd scores;
  std::vector<IdentityLabel> image_ids;
  std::vector<IdentityLabel> text_ids;

  int batch_size() const { return static_cast<int>(scores.rows()); }
  bool is_positive(int i, int j) const {
    return image_ids[static_cast<size_t>(i)] ==
           text_ids[static_cast<size_t>(j)];
  }
  // Checks shape, [-1, 1] range, and that every row and column has at least
  // one positive.
  void validate() const;
};

enum class Direction { kImageToText, kTextToImage };

// Temperature softmax over the entries selected by mask (max-subtracted).
// Unselected entries get weight zero; selected weights sum to one.
Eigen::VectorXd softmax_weights(const Eigen::VectorXd& row,
                                const std::vector<bool>& mask, double tau);

// Softmax-weighted average similarity of each sample's positive set
// (or of the whole row/column under kAllPairs).
Eigen::VectorXd positive_aggregate(const SimilarityMatrix& sim, Direction dir,
                                   const TALConfig& config);

// Triplet alignment loss: mean over the batch of the two-direction hinge
// terms. Deterministic; the log-sum-exp is max-subtracted.
double tal(const SimilarityMatrix& sim, const TALConfig& config);

struct TALGradient {
  double loss = 0.0;
  Eigen::MatrixXd d_scores;  // d loss / d scores
};

TALGradient tal_with_grad(const SimilarityMatrix& sim,
                          const TALConfig& config);

// Sum of the global-alignment and fusion-alignment losses.
double total_loss(const SimilarityMatrix& sim_global,
                  const SimilarityMatrix& sim_fused, const TALConfig& config);

}  // namespace gea
