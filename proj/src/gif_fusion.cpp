// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/gif_fusion.hpp"

namespace gea {

GifBranch GifBranch::make(int dim, int heads, int layers, RandomSource& rng) {
  GifBranch b;
  b.ln_q = nn::LayerNorm::make(dim);
  b.ln_kv = nn::LayerNorm::make(dim);
  b.ca = nn::MultiHeadAttention::make(dim, heads, rng);
  // Residual projections start at zero so the stack begins near-identity.
  b.encoder = nn::TransformerEncoder::make(dim, heads, layers, rng,
                                           /*zero_residual=*/true);
  return b;
}

nn::Mat GifBranch::forward(const nn::Mat& q_seq, const nn::Mat& kv_seq,
                           Cache& cache) const {
  const nn::Mat q = ln_q.forward(q_seq, cache.lnq);
  const nn::Mat kv = ln_kv.forward(kv_seq, cache.lnkv);
  const nn::Mat attended = ca.forward(q, kv, kv, cache.ca);
  nn::Mat fused = encoder.forward(attended, cache.encoder);
  if (!fused.allFinite()) throw NumericError("GifBranch: non-finite output");
  return fused;
}

std::pair<nn::Mat, nn::Mat> GifBranch::backward(const nn::Mat& g_out,
                                                const Cache& cache) {
  const nn::Mat g_attended = encoder.backward(g_out, cache.encoder);
  const auto ca_grads = ca.backward(g_attended, cache.ca);
  nn::Mat g_q_seq = ln_q.backward(ca_grads.q_in, cache.lnq);
  nn::Mat g_kv_seq = ln_kv.backward(ca_grads.k_in + ca_grads.v_in,
                                    cache.lnkv);
  return {std::move(g_q_seq), std::move(g_kv_seq)};
}

void GifBranch::collect(const std::string& prefix,
                        std::vector<nn::ParamRef>& out) {
  ln_q.collect(prefix + ".ln_q", out);
  ln_kv.collect(prefix + ".ln_kv", out);
  ca.collect(prefix + ".ca", out);
  encoder.collect(prefix + ".encoder", out);
}

GifParams GifParams::make(int dim, int heads, int layers, RandomSource& rng) {
  GifParams p;
  p.heads = heads;
  p.image_branch = GifBranch::make(dim, heads, layers, rng);
  p.text_branch = GifBranch::make(dim, heads, layers, rng);
  return p;
}

void GifParams::collect(const std::string& prefix,
                        std::vector<nn::ParamRef>& out) {
  image_branch.collect(prefix + ".image_branch", out);
  text_branch.collect(prefix + ".text_branch", out);
}

nn::Mat cross_attention(const nn::Mat& q_seq, const nn::Mat& k_seq,
                        const nn::Mat& v_seq,
                        const nn::MultiHeadAttention& params) {
  nn::MultiHeadAttention::Cache cache;
  return params.forward(q_seq, k_seq, v_seq, cache);
}

nn::Mat attention_heatmap(const nn::Mat& q_seq, const nn::Mat& k_seq,
                          const nn::MultiHeadAttention& params) {
  return params.attention_weights(q_seq, k_seq);
}

Eigen::VectorXd fuse_image(const TokenSequence& image_seq,
                           const TokenSequence& generated_seq,
                           const GifParams& params, GifBranch::Cache& cache) {
  if (image_seq.rows.cols() != generated_seq.rows.cols())
    throw ValidationError("fuse_image: dimension mismatch");
  const nn::Mat fused = params.image_branch.forward(
      image_seq.rows, generated_seq.rows, cache);
  return fused.row(0);
}

Eigen::VectorXd fuse_text(const TokenSequence& text_seq,
                          const TokenSequence& generated_seq,
                          const GifParams& params, GifBranch::Cache& cache) {
  if (text_seq.rows.cols() != generated_seq.rows.cols())
    throw ValidationError("fuse_text: dimension mismatch");
  const nn::Mat fused = params.text_branch.forward(
      text_seq.rows, generated_seq.rows, cache);
  if (text_seq.eos_index < 0 || text_seq.eos_index >= fused.rows())
    throw ValidationError("fuse_text: eos index out of range");
  return fused.row(text_seq.eos_index);
}

}  // namespace gea
