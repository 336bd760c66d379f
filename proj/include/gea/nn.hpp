// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense layers with explicit forward/backward passes. Activations
// needed by backward are kept in per-call Cache structs so a whole batch can
// be run forward before any gradient flows; backward accumulates into the
// layer's grad buffers.
#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "gea/common.hpp"

namespace gea::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Named view of one parameter tensor and its gradient accumulator. The
// collection order of a model is stable and defines the checkpoint and
// optimizer-state layout.
struct ParamRef {
  std::string name;
  Mat* value;
  Mat* grad;
};

// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& logits);

Mat gelu(const Mat& x);
Mat gelu_grad(const Mat& x);

struct Linear {
  Mat weight;  // in x out
  Mat bias;    // 1 x out (empty when bias-free)
  Mat g_weight, g_bias;

  struct Cache {
    Mat x;
  };

  static Linear make(int in, int out, double init_std, RandomSource& rng,
                     bool with_bias = true);
  static Linear identity(int dim, bool with_bias = true);

  bool has_bias() const { return bias.size() > 0; }
  Mat forward(const Mat& x, Cache& cache) const;
  Mat backward(const Mat& g_out, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

struct LayerNorm {
  Mat gamma, beta;  // 1 x d
  Mat g_gamma, g_beta;
  double eps = 1e-5;

  struct Cache {
    Mat x_hat;
    Vec inv_std;
  };

  static LayerNorm make(int dim);
  Mat forward(const Mat& x, Cache& cache) const;
  Mat backward(const Mat& g_out, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

// Multi-head attention over row-major token matrices. Queries, keys, and
// values may come from different sequences; self-attention passes the same
// matrix three times. Per-head scaling is 1/sqrt(d/heads).
struct MultiHeadAttention {
  int heads = 1;
  Mat w_q, w_k, w_v, w_o;  // d x d
  Mat g_wq, g_wk, g_wv, g_wo;

  struct Cache {
    Mat q_in, k_in, v_in;
    Mat q, k, v;             // projected
    std::vector<Mat> attn;   // per-head post-softmax weights, Lq x Lk
    Mat concat;              // Lq x d, pre-output-projection
  };

  struct InputGrads {
    Mat q_in, k_in, v_in;
  };

  static MultiHeadAttention make(int dim, int heads, RandomSource& rng,
                                 bool zero_out_proj = false);

  int dim() const { return static_cast<int>(w_q.rows()); }
  int head_dim() const { return dim() / heads; }

  Mat forward(const Mat& q_in, const Mat& k_in, const Mat& v_in,
              Cache& cache) const;
  InputGrads backward(const Mat& g_out, const Cache& cache);

  // Head-averaged post-softmax weights (rows sum to 1), for visualization.
  Mat attention_weights(const Mat& q_in, const Mat& k_in) const;

  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
// zero_residual zeroes the attention output projection and the second MLP
// weight so the block starts as the identity map.
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;  // d -> 4d -> d

  struct Cache {
    LayerNorm::Cache ln1c, ln2c;
    MultiHeadAttention::Cache attnc;
    Linear::Cache fc1c, fc2c;
    Mat mlp_pre;  // fc1 output, pre-GELU
  };

  static TransformerBlock make(int dim, int heads, RandomSource& rng,
                               bool zero_residual = false);
  Mat forward(const Mat& x, Cache& cache) const;
  Mat backward(const Mat& g_out, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

struct TransformerEncoder {
  std::vector<TransformerBlock> blocks;

  struct Cache {
    std::vector<TransformerBlock::Cache> blocks;
  };

  static TransformerEncoder make(int dim, int heads, int layers,
                                 RandomSource& rng,
                                 bool zero_residual = false);
  Mat forward(const Mat& x, Cache& cache) const;
  Mat backward(const Mat& g_out, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

// Zeroes every grad buffer reachable from the refs.
void zero_grads(const std::vector<ParamRef>& params);

}  // namespace gea::nn
