// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <vector>

#include "gea/tal_loss.hpp"

namespace gea {

// Mix-weight schedule: omega rises linearly from omega_start at epoch 0 to
// omega_end at the final epoch.
struct MixSchedule {
  double omega_start = 0.3;
  double omega_end = 0.6;
  int total_epochs = 60;

  void validate() const;
};

double omega_at(const MixSchedule& schedule, int epoch);

// Convex combination (1 - omega) * t_eos + omega * g_cls. The endpoints
// return the inputs bit-exactly.
Eigen::VectorXd mix_tokens(const Eigen::VectorXd& t_eos,
                           const Eigen::VectorXd& g_cls, double omega);

// Cosine similarity, clamped into [-1, 1] against round-off overshoot.
// Zero-norm inputs raise NumericError.
double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

// Gradient of cosine_similarity w.r.t. u (swap arguments for v).
Eigen::VectorXd cosine_similarity_grad_u(const Eigen::VectorXd& u,
                                         const Eigen::VectorXd& v);

// Pairwise cosine similarities of K image globals against K mixed text
// globals, with identity labels attached. Rows are images, columns texts.
SimilarityMatrix similarity_matrix(const std::vector<Eigen::VectorXd>& images,
                                   const std::vector<Eigen::VectorXd>& texts,
                                   const std::vector<IdentityLabel>& image_ids,
                                   const std::vector<IdentityLabel>& text_ids);

// Accumulates d loss / d image_i and d loss / d text_j from d loss / d S.
void similarity_matrix_backward(const std::vector<Eigen::VectorXd>& images,
                                const std::vector<Eigen::VectorXd>& texts,
                                const Eigen::MatrixXd& d_scores,
                                std::vector<Eigen::VectorXd>& d_images,
                                std::vector<Eigen::VectorXd>& d_texts);

}  // namespace gea
