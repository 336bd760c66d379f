// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "gea/encoders.hpp"
#include "gea/nn.hpp"

namespace gea {

// One fusion branch: layer-normalized cross-attention keyed on generated
// tokens, followed by a transformer encoder. Queries and keys/values get
// independent pre-norm gains.
struct GifBranch {
  nn::LayerNorm ln_q, ln_kv;
  nn::MultiHeadAttention ca;
  nn::TransformerEncoder encoder;

  struct Cache {
    nn::LayerNorm::Cache lnq, lnkv;
    nn::MultiHeadAttention::Cache ca;
    nn::TransformerEncoder::Cache encoder;
  };

  static GifBranch make(int dim, int heads, int layers, RandomSource& rng);
  nn::Mat forward(const nn::Mat& q_seq, const nn::Mat& kv_seq,
                  Cache& cache) const;
  // Returns (d q_seq, d kv_seq); accumulates parameter grads.
  std::pair<nn::Mat, nn::Mat> backward(const nn::Mat& g_out,
                                       const Cache& cache);
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
};

// Learnable state of the fusion module: an image branch and a text branch,
// each a cross-attention layer plus its own transformer stack.
struct GifParams {
  GifBranch image_branch;
  GifBranch text_branch;
  int heads = 8;

  static GifParams make(int dim, int heads, int layers, RandomSource& rng);
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
};

// softmax(Q Kt / sqrt(d_head)) V with learned projections, multi-head.
nn::Mat cross_attention(const nn::Mat& q_seq, const nn::Mat& k_seq,
                        const nn::Mat& v_seq,
                        const nn::MultiHeadAttention& params);

// Head-averaged post-softmax attention weights (Lq x Lk; rows sum to 1).
nn::Mat attention_heatmap(const nn::Mat& q_seq, const nn::Mat& k_seq,
                          const nn::MultiHeadAttention& params);

// Fused global for an image against its generated counterpart: the class
// position (row 0) of the image branch output.
Eigen::VectorXd fuse_image(const TokenSequence& image_seq,
                           const TokenSequence& generated_seq,
                           const GifParams& params, GifBranch::Cache& cache);

// Fused global for a text: the eos position of the text branch output.
Eigen::VectorXd fuse_text(const TokenSequence& text_seq,
                          const TokenSequence& generated_seq,
                          const GifParams& params, GifBranch::Cache& cache);

}  // namespace gea
