// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/tgte.hpp"

#include <cmath>
#include <string>

namespace gea {

void MixSchedule::validate() const {
  if (total_epochs < 1)
    throw ValidationError("MixSchedule: total_epochs must be positive");
  if (!(0.0 <= omega_start && omega_start <= omega_end && omega_end <= 1.0))
    throw ValidationError(
        "MixSchedule: need 0 <= omega_start <= omega_end <= 1");
}

double omega_at(const MixSchedule& schedule, int epoch) {
  schedule.validate();
  if (epoch < 0 || epoch >= schedule.total_epochs)
    throw ValidationError("omega_at: epoch " + std::to_string(epoch) +
                          " outside [0, " +
                          std::to_string(schedule.total_epochs) + ")");
  if (schedule.total_epochs == 1) return schedule.omega_end;
  const double f =
      static_cast<double>(epoch) / (schedule.total_epochs - 1);
  return schedule.omega_start + (schedule.omega_end - schedule.omega_start) * f;
}

Eigen::VectorXd mix_tokens(const Eigen::VectorXd& t_eos,
                           const Eigen::VectorXd& g_cls, double omega) {
  if (t_eos.size() != g_cls.size())
    throw ValidationError("mix_tokens: dimension mismatch (" +
                          std::to_string(t_eos.size()) + " vs " +
                          std::to_string(g_cls.size()) + ")");
  if (!(omega >= 0.0 && omega <= 1.0))
    throw ValidationError("mix_tokens: omega must be in [0, 1]");
  if (omega == 0.0) return t_eos;
  if (omega == 1.0) return g_cls;
  return (1.0 - omega) * t_eos + omega * g_cls;
}

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size())
    throw ValidationError("cosine_similarity: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0)
    throw NumericError("cosine_similarity: zero-norm input");
  const double s = u.dot(v) / (nu * nv);
  return std::clamp(s, -1.0, 1.0);
}

Eigen::VectorXd cosine_similarity_grad_u(const Eigen::VectorXd& u,
                                         const Eigen::VectorXd& v) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0)
    throw NumericError("cosine_similarity_grad: zero-norm input");
  const double s = u.dot(v) / (nu * nv);
  return v / (nu * nv) - (s / (nu * nu)) * u;
}

SimilarityMatrix similarity_matrix(const std::vector<Eigen::VectorXd>& images,
                                   const std::vector<Eigen::VectorXd>& texts,
                                   const std::vector<IdentityLabel>& image_ids,
                                   const std::vector<IdentityLabel>& text_ids) {
  const size_t K = images.size();
  if (K == 0) throw ValidationError("similarity_matrix: empty batch");
  if (texts.size() != K)
    throw ValidationError("similarity_matrix: batch size mismatch (" +
                          std::to_string(K) + " images vs " +
                          std::to_string(texts.size()) + " texts)");
  if (image_ids.size() != K || text_ids.size() != K)
    throw ValidationError("similarity_matrix: label count mismatch");

  SimilarityMatrix sim;
  sim.scores.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
  sim.image_ids = image_ids;
  sim.text_ids = text_ids;
  for (size_t i = 0; i < K; ++i)
    for (size_t j = 0; j < K; ++j) {
      try {
        sim.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            cosine_similarity(images[i], texts[j]);
      } catch (const NumericError& e) {
        throw NumericError("similarity_matrix: entry (" + std::to_string(i) +
                           ", " + std::to_string(j) + "): " + e.what());
      }
    }
  return sim;
}

void similarity_matrix_backward(const std::vector<Eigen::VectorXd>& images,
                                const std::vector<Eigen::VectorXd>& texts,
                                const Eigen::MatrixXd& d_scores,
                                std::vector<Eigen::VectorXd>& d_images,
                                std::vector<Eigen::VectorXd>& d_texts) {
  const size_t K = images.size();
  if (d_images.size() != K || d_texts.size() != K ||
      texts.size() != K ||
      d_scores.rows() != static_cast<Eigen::Index>(K) ||
      d_scores.cols() != static_cast<Eigen::Index>(K))
    throw ValidationError("similarity_matrix_backward: shape mismatch");
  for (size_t i = 0; i < K; ++i)
    for (size_t j = 0; j < K; ++j) {
      const double g = d_scores(static_cast<Eigen::Index>(i),
                                static_cast<Eigen::Index>(j));
      if (g == 0.0) continue;
      d_images[i] += g * cosine_similarity_grad_u(images[i], texts[j]);
      d_texts[j] += g * cosine_similarity_grad_u(texts[j], images[i]);
    }
}

}  // namespace gea
