// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/nn.hpp"

#include <cmath>
#include <numbers>

namespace gea::nn {

namespace {

Mat random_matrix(int rows, int cols, double std, RandomSource& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = std * rng.normal();
  return m;
}

}  // namespace

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double denom = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double e = std::exp(logits(i, j) - m);
      out(i, j) = e;
      denom += e;
    }
    out.row(i) /= denom;
  }
  return out;
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  });
}

Mat gelu_grad(const Mat& x) {
  return x.unaryExpr([](double v) {
    const double phi = std::exp(-0.5 * v * v) /
                       std::sqrt(2.0 * std::numbers::pi);
    return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) + v * phi;
  });
}

// ---------------------------------------------------------------------------
// Linear

Linear Linear::make(int in, int out, double init_std, RandomSource& rng,
                    bool with_bias) {
  Linear l;
  l.weight = random_matrix(in, out, init_std, rng);
  l.g_weight = Mat::Zero(in, out);
  if (with_bias) {
    l.bias = Mat::Zero(1, out);
    l.g_bias = Mat::Zero(1, out);
  }
  return l;
}

Linear Linear::identity(int dim, bool with_bias) {
  Linear l;
  l.weight = Mat::Identity(dim, dim);
  l.g_weight = Mat::Zero(dim, dim);
  if (with_bias) {
    l.bias = Mat::Zero(1, dim);
    l.g_bias = Mat::Zero(1, dim);
  }
  return l;
}

Mat Linear::forward(const Mat& x, Cache& cache) const {
  if (x.cols() != weight.rows())
    throw ValidationError("Linear: input dimension " +
                          std::to_string(x.cols()) + " != " +
                          std::to_string(weight.rows()));
  cache.x = x;
  Mat y = x * weight;
  if (has_bias()) y.rowwise() += bias.row(0);
  return y;
}

Mat Linear::backward(const Mat& g_out, const Cache& cache) {
  g_weight += cache.x.transpose() * g_out;
  if (has_bias()) g_bias.row(0) += g_out.colwise().sum();
  return g_out * weight.transpose();
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight, &g_weight});
  if (has_bias()) out.push_back({prefix + ".bias", &bias, &g_bias});
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm LayerNorm::make(int dim) {
  LayerNorm ln;
  ln.gamma = Mat::Ones(1, dim);
  ln.beta = Mat::Zero(1, dim);
  ln.g_gamma = Mat::Zero(1, dim);
  ln.g_beta = Mat::Zero(1, dim);
  return ln;
}

Mat LayerNorm::forward(const Mat& x, Cache& cache) const {
  const Eigen::Index d = x.cols();
  if (d != gamma.cols())
    throw ValidationError("LayerNorm: dimension mismatch");
  cache.x_hat.resize(x.rows(), d);
  cache.inv_std.resize(x.rows());
  Mat y(x.rows(), d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double inv_std = 1.0 / std::sqrt(var + eps);
    cache.inv_std[i] = inv_std;
    cache.x_hat.row(i) = (x.row(i).array() - mean) * inv_std;
    y.row(i) = cache.x_hat.row(i).cwiseProduct(gamma.row(0)) + beta.row(0);
  }
  return y;
}

Mat LayerNorm::backward(const Mat& g_out, const Cache& cache) {
  const Eigen::Index d = g_out.cols();
  Mat g_x(g_out.rows(), d);
  for (Eigen::Index i = 0; i < g_out.rows(); ++i) {
    const Eigen::RowVectorXd g_hat =
        g_out.row(i).cwiseProduct(gamma.row(0));
    const double mean_g = g_hat.mean();
    const double mean_gx = g_hat.cwiseProduct(cache.x_hat.row(i)).mean();
    g_x.row(i) = cache.inv_std[i] *
                 (g_hat.array() - mean_g -
                  cache.x_hat.row(i).array() * mean_gx);
    g_gamma.row(0) += g_out.row(i).cwiseProduct(cache.x_hat.row(i));
    g_beta.row(0) += g_out.row(i);
  }
  return g_x;
}

void LayerNorm::collect(const std::string& prefix,
                        std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma, &g_gamma});
  out.push_back({prefix + ".beta", &beta, &g_beta});
}

// ---------------------------------------------------------------------------
// MultiHeadAttention

MultiHeadAttention MultiHeadAttention::make(int dim, int heads,
                                            RandomSource& rng,
                                            bool zero_out_proj) {
  if (heads < 1 || dim % heads != 0)
    throw ValidationError("MultiHeadAttention: dim must divide by heads");
  MultiHeadAttention a;
  a.heads = heads;
  const double std = 1.0 / std::sqrt(static_cast<double>(dim));
  a.w_q = random_matrix(dim, dim, std, rng);
  a.w_k = random_matrix(dim, dim, std, rng);
  a.w_v = random_matrix(dim, dim, std, rng);
  a.w_o = zero_out_proj ? Mat::Zero(dim, dim)
                        : random_matrix(dim, dim, std, rng);
  a.g_wq = Mat::Zero(dim, dim);
  a.g_wk = Mat::Zero(dim, dim);
  a.g_wv = Mat::Zero(dim, dim);
  a.g_wo = Mat::Zero(dim, dim);
  return a;
}

Mat MultiHeadAttention::forward(const Mat& q_in, const Mat& k_in,
                                const Mat& v_in, Cache& cache) const {
  const int d = dim();
  if (q_in.cols() != d || k_in.cols() != d || v_in.cols() != d)
    throw ValidationError("MultiHeadAttention: dimension mismatch");
  if (k_in.rows() != v_in.rows())
    throw ValidationError("MultiHeadAttention: key/value length mismatch");
  if (k_in.rows() < 1)
    throw ValidationError("MultiHeadAttention: empty key sequence");

  cache.q_in = q_in;
  cache.k_in = k_in;
  cache.v_in = v_in;
  cache.q = q_in * w_q;
  cache.k = k_in * w_k;
  cache.v = v_in * w_v;

  const int dh = head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.attn.assign(static_cast<size_t>(heads), Mat());
  cache.concat.resize(q_in.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto qh = cache.q.middleCols(h * dh, dh);
    const auto kh = cache.k.middleCols(h * dh, dh);
    const auto vh = cache.v.middleCols(h * dh, dh);
    Mat logits = scale * (qh * kh.transpose());
    cache.attn[static_cast<size_t>(h)] = softmax_rows(logits);
    cache.concat.middleCols(h * dh, dh) =
        cache.attn[static_cast<size_t>(h)] * vh;
  }
  return cache.concat * w_o;
}

MultiHeadAttention::InputGrads MultiHeadAttention::backward(
    const Mat& g_out, const Cache& cache) {
  const int d = dim();
  const int dh = head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  g_wo += cache.concat.transpose() * g_out;
  const Mat g_concat = g_out * w_o.transpose();

  Mat g_q(cache.q.rows(), d), g_k(cache.k.rows(), d), g_v(cache.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto qh = cache.q.middleCols(h * dh, dh);
    const auto kh = cache.k.middleCols(h * dh, dh);
    const auto vh = cache.v.middleCols(h * dh, dh);
    const Mat& attn = cache.attn[static_cast<size_t>(h)];
    const auto g_oh = g_concat.middleCols(h * dh, dh);

    const Mat g_attn = g_oh * vh.transpose();
    g_v.middleCols(h * dh, dh) = attn.transpose() * g_oh;

    // Softmax backward, row-wise.
    Mat g_logits(attn.rows(), attn.cols());
    for (Eigen::Index i = 0; i < attn.rows(); ++i) {
      const double dot = g_attn.row(i).dot(attn.row(i));
      g_logits.row(i) =
          (attn.row(i).array() * (g_attn.row(i).array() - dot)).matrix();
    }
    g_logits *= scale;

    g_q.middleCols(h * dh, dh) = g_logits * kh;
    g_k.middleCols(h * dh, dh) = g_logits.transpose() * qh;
  }

  InputGrads grads;
  grads.q_in = g_q * w_q.transpose();
  grads.k_in = g_k * w_k.transpose();
  grads.v_in = g_v * w_v.transpose();
  g_wq += cache.q_in.transpose() * g_q;
  g_wk += cache.k_in.transpose() * g_k;
  g_wv += cache.v_in.transpose() * g_v;
  return grads;
}

Mat MultiHeadAttention::attention_weights(const Mat& q_in,
                                          const Mat& k_in) const {
  Cache cache;
  forward(q_in, k_in, Mat::Zero(k_in.rows(), dim()), cache);
  Mat avg = Mat::Zero(q_in.rows(), k_in.rows());
  for (const Mat& a : cache.attn) avg += a;
  return avg / static_cast<double>(heads);
}

void MultiHeadAttention::collect(const std::string& prefix,
                                 std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w_q", &w_q, &g_wq});
  out.push_back({prefix + ".w_k", &w_k, &g_wk});
  out.push_back({prefix + ".w_v", &w_v, &g_wv});
  out.push_back({prefix + ".w_o", &w_o, &g_wo});
}

// ---------------------------------------------------------------------------
// TransformerBlock

TransformerBlock TransformerBlock::make(int dim, int heads, RandomSource& rng,
                                        bool zero_residual) {
  TransformerBlock b;
  b.ln1 = LayerNorm::make(dim);
  b.ln2 = LayerNorm::make(dim);
  b.attn = MultiHeadAttention::make(dim, heads, rng, zero_residual);
  const double std1 = 1.0 / std::sqrt(static_cast<double>(dim));
  const double std2 = 1.0 / std::sqrt(static_cast<double>(4 * dim));
  b.fc1 = Linear::make(dim, 4 * dim, std1, rng);
  b.fc2 = zero_residual
              ? Linear::make(4 * dim, dim, 0.0, rng)
              : Linear::make(4 * dim, dim, std2, rng);
  return b;
}

Mat TransformerBlock::forward(const Mat& x, Cache& cache) const {
  const Mat u = ln1.forward(x, cache.ln1c);
  const Mat x1 = x + attn.forward(u, u, u, cache.attnc);
  const Mat v = ln2.forward(x1, cache.ln2c);
  cache.mlp_pre = fc1.forward(v, cache.fc1c);
  const Mat m = fc2.forward(gelu(cache.mlp_pre), cache.fc2c);
  return x1 + m;
}

Mat TransformerBlock::backward(const Mat& g_out, const Cache& cache) {
  const Mat g_hidden = fc2.backward(g_out, cache.fc2c);
  const Mat g_pre = g_hidden.cwiseProduct(gelu_grad(cache.mlp_pre));
  const Mat g_v = fc1.backward(g_pre, cache.fc1c);
  Mat g_x1 = g_out + ln2.backward(g_v, cache.ln2c);

  const auto attn_grads = attn.backward(g_x1, cache.attnc);
  const Mat g_u = attn_grads.q_in + attn_grads.k_in + attn_grads.v_in;
  return g_x1 + ln1.backward(g_u, cache.ln1c);
}

void TransformerBlock::collect(const std::string& prefix,
                               std::vector<ParamRef>& out) {
  ln1.collect(prefix + ".ln1", out);
  attn.collect(prefix + ".attn", out);
  ln2.collect(prefix + ".ln2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

// ---------------------------------------------------------------------------
// TransformerEncoder

TransformerEncoder TransformerEncoder::make(int dim, int heads, int layers,
                                            RandomSource& rng,
                                            bool zero_residual) {
  TransformerEncoder enc;
  enc.blocks.reserve(static_cast<size_t>(layers));
  for (int i = 0; i < layers; ++i)
    enc.blocks.push_back(TransformerBlock::make(dim, heads, rng,
                                                zero_residual));
  return enc;
}

Mat TransformerEncoder::forward(const Mat& x, Cache& cache) const {
  cache.blocks.resize(blocks.size());
  Mat h = x;
  for (size_t i = 0; i < blocks.size(); ++i)
    h = blocks[i].forward(h, cache.blocks[i]);
  return h;
}

Mat TransformerEncoder::backward(const Mat& g_out, const Cache& cache) {
  Mat g = g_out;
  for (size_t i = blocks.size(); i-- > 0;)
    g = blocks[i].backward(g, cache.blocks[i]);
  return g;
}

void TransformerEncoder::collect(const std::string& prefix,
                                 std::vector<ParamRef>& out) {
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& p : params) p.grad->setZero();
}

}  // namespace gea::nn
