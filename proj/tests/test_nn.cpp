// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Layer-level gradient checks at tiny dimensions. Each scalar head is
// sum(layer(x)) or a weighted sum, compared against central differences.
#include <doctest.h>

#include "gea/nn.hpp"
#include "test_util.hpp"

using namespace gea;

namespace {

// Weighted scalar head keeps gradients non-uniform across coordinates.
double weighted_sum(const nn::Mat& y, const nn::Mat& weights) {
  return (y.array() * weights.array()).sum();
}

void check_param_grads(const std::vector<nn::ParamRef>& params,
                       const std::function<double()>& loss, double tol) {
  for (const auto& p : params) {
    for (Eigen::Index i = 0; i < p.value->rows(); ++i)
      for (Eigen::Index j = 0; j < p.value->cols(); ++j) {
        const double fd =
            testutil::central_diff(loss, &(*p.value)(i, j));
        const double analytic = (*p.grad)(i, j);
        INFO(p.name, "(", i, ",", j, ")");
        CHECK(testutil::rel_error(analytic, fd) < tol);
      }
  }
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("linear forward/backward") {
  RandomSource rng(1);
  nn::Linear lin = nn::Linear::make(3, 4, 0.5, rng);
  nn::Mat x = testutil::random_matrix(2, 3, rng);
  const nn::Mat head = testutil::random_matrix(2, 4, rng);

  std::vector<nn::ParamRef> params;
  lin.collect("linear", params);

  auto loss = [&]() {
    nn::Linear::Cache c;
    return weighted_sum(lin.forward(x, c), head);
  };

  nn::zero_grads(params);
  nn::Linear::Cache cache;
  lin.forward(x, cache);
  const nn::Mat g_x = lin.backward(head, cache);
  check_param_grads(params, loss, 1e-6);

  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double fd = testutil::central_diff(loss, &x(i, j));
      CHECK(testutil::rel_error(g_x(i, j), fd) < 1e-6);
    }
}

TEST_CASE("layer norm forward/backward") {
  RandomSource rng(2);
  nn::LayerNorm ln = nn::LayerNorm::make(5);
  ln.gamma = testutil::random_matrix(1, 5, rng, 0.5);
  ln.beta = testutil::random_matrix(1, 5, rng, 0.5);
  nn::Mat x = testutil::random_matrix(3, 5, rng);
  const nn::Mat head = testutil::random_matrix(3, 5, rng);

  std::vector<nn::ParamRef> params;
  ln.collect("ln", params);

  auto loss = [&]() {
    nn::LayerNorm::Cache c;
    return weighted_sum(ln.forward(x, c), head);
  };

  nn::zero_grads(params);
  nn::LayerNorm::Cache cache;
  ln.forward(x, cache);
  const nn::Mat g_x = ln.backward(head, cache);
  check_param_grads(params, loss, 1e-5);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double fd = testutil::central_diff(loss, &x(i, j));
      CHECK(testutil::rel_error(g_x(i, j), fd) < 1e-5);
    }

  // Rows come out normalized: zero mean, unit variance under gamma = 1.
  nn::LayerNorm plain = nn::LayerNorm::make(5);
  nn::LayerNorm::Cache c2;
  const nn::Mat y = plain.forward(x, c2);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    CHECK(std::abs(y.row(i).mean()) < 1e-12);
    CHECK((y.row(i).array() - y.row(i).mean()).square().mean() ==
          doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("multi-head attention backward (cross inputs, 2 heads)") {
  RandomSource rng(3);
  nn::MultiHeadAttention attn = nn::MultiHeadAttention::make(6, 2, rng);
  nn::Mat q_in = testutil::random_matrix(3, 6, rng);
  nn::Mat kv_in = testutil::random_matrix(4, 6, rng);
  const nn::Mat head = testutil::random_matrix(3, 6, rng);

  std::vector<nn::ParamRef> params;
  attn.collect("attn", params);

  auto loss = [&]() {
    nn::MultiHeadAttention::Cache c;
    return weighted_sum(attn.forward(q_in, kv_in, kv_in, c), head);
  };

  nn::zero_grads(params);
  nn::MultiHeadAttention::Cache cache;
  attn.forward(q_in, kv_in, kv_in, cache);
  const auto grads = attn.backward(head, cache);
  check_param_grads(params, loss, 1e-5);

  const nn::Mat g_kv = grads.k_in + grads.v_in;
  for (Eigen::Index i = 0; i < q_in.rows(); ++i)
    for (Eigen::Index j = 0; j < q_in.cols(); ++j) {
      const double fd = testutil::central_diff(loss, &q_in(i, j));
      CHECK(testutil::rel_error(grads.q_in(i, j), fd) < 1e-5);
    }
  for (Eigen::Index i = 0; i < kv_in.rows(); ++i)
    for (Eigen::Index j = 0; j < kv_in.cols(); ++j) {
      const double fd = testutil::central_diff(loss, &kv_in(i, j));
      CHECK(testutil::rel_error(g_kv(i, j), fd) < 1e-5);
    }
}

TEST_CASE("transformer block backward and zero-residual identity") {
  RandomSource rng(4);
  nn::TransformerBlock block = nn::TransformerBlock::make(4, 1, rng);
  nn::Mat x = testutil::random_matrix(3, 4, rng);
  const nn::Mat head = testutil::random_matrix(3, 4, rng);

  std::vector<nn::ParamRef> params;
  block.collect("block", params);

  auto loss = [&]() {
    nn::TransformerBlock::Cache c;
    return weighted_sum(block.forward(x, c), head);
  };

  nn::zero_grads(params);
  nn::TransformerBlock::Cache cache;
  block.forward(x, cache);
  const nn::Mat g_x = block.backward(head, cache);
  check_param_grads(params, loss, 1e-4);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double fd = testutil::central_diff(loss, &x(i, j));
      CHECK(testutil::rel_error(g_x(i, j), fd) < 1e-4);
    }

  // Zero residual projections make the block the identity map.
  nn::TransformerBlock id_block =
      nn::TransformerBlock::make(4, 1, rng, /*zero_residual=*/true);
  nn::TransformerBlock::Cache c2;
  const nn::Mat y = id_block.forward(x, c2);
  CHECK((y - x).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gelu derivative matches finite differences") {
  RandomSource rng(5);
  nn::Mat x = testutil::random_matrix(4, 4, rng, 2.0);
  const nn::Mat dydx = nn::gelu_grad(x);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double fd = testutil::central_diff(
          [&]() { return nn::gelu(x)(i, j); }, &x(i, j), 1e-6);
      CHECK(testutil::rel_error(dydx(i, j), fd) < 1e-6);
    }
}

}  // TEST_SUITE
