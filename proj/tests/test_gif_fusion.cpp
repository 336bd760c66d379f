// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gea/gif_fusion.hpp"
#include "test_util.hpp"

using namespace gea;

namespace {

nn::MultiHeadAttention identity_attention(int dim) {
  RandomSource rng(0);
  nn::MultiHeadAttention a = nn::MultiHeadAttention::make(dim, 1, rng);
  a.w_q = nn::Mat::Identity(dim, dim);
  a.w_k = nn::Mat::Identity(dim, dim);
  a.w_v = nn::Mat::Identity(dim, dim);
  a.w_o = nn::Mat::Identity(dim, dim);
  return a;
}

TokenSequence make_seq(const nn::Mat& rows, SequenceKind kind, int eos = 0) {
  TokenSequence seq;
  seq.rows = rows;
  seq.kind = kind;
  seq.eos_index = eos;
  return seq;
}

}  // namespace

TEST_SUITE("gif_fusion") {

TEST_CASE("single key with identity projections returns V everywhere") {
  RandomSource rng(1);
  const nn::MultiHeadAttention attn = identity_attention(4);
  const nn::Mat q = testutil::random_matrix(3, 4, rng);
  const nn::Mat kv = testutil::random_matrix(1, 4, rng);
  const nn::Mat out = cross_attention(q, kv, kv, attn);
  for (int i = 0; i < 3; ++i)
    CHECK((out.row(i) - kv.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two keys with identical logits average the values") {
  const nn::MultiHeadAttention attn = identity_attention(4);
  nn::Mat q(1, 4);
  q.setZero();  // zero query gives equal logits for any keys
  RandomSource rng(2);
  const nn::Mat kv = testutil::random_matrix(2, 4, rng);
  const nn::Mat out = cross_attention(q, kv, kv, attn);
  const nn::Mat mean = 0.5 * (kv.row(0) + kv.row(1));
  CHECK((out.row(0) - mean.row(0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("single-head d=8 output matches the direct transcription") {
  RandomSource rng(3);
  for (int iter = 0; iter < 100; ++iter) {
    nn::MultiHeadAttention attn = nn::MultiHeadAttention::make(8, 1, rng);
    const nn::Mat q_seq = testutil::random_matrix(3, 8, rng);
    const nn::Mat kv_seq = testutil::random_matrix(4, 8, rng);
    const nn::Mat out = cross_attention(q_seq, kv_seq, kv_seq, attn);
    const nn::Mat expected = testutil::oracle::cross_attention_reference(
        q_seq, kv_seq, kv_seq, attn.w_q, attn.w_k, attn.w_v, attn.w_o);
    CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("attention heatmap rows sum to one") {
  RandomSource rng(4);
  SUBCASE("single key collapses to an all-ones column") {
    const nn::MultiHeadAttention attn = identity_attention(4);
    const nn::Mat q = testutil::random_matrix(5, 4, rng);
    const nn::Mat kv = testutil::random_matrix(1, 4, rng);
    const nn::Mat w = attention_heatmap(q, kv, attn);
    CHECK(w.rows() == 5);
    CHECK(w.cols() == 1);
    CHECK((w.array() - 1.0).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("uniform logits spread to 1/Lk") {
    const nn::MultiHeadAttention attn = identity_attention(4);
    nn::Mat q(2, 4);
    q.setZero();
    const nn::Mat kv = testutil::random_matrix(3, 4, rng);
    const nn::Mat w = attention_heatmap(q, kv, attn);
    CHECK((w.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-14);
  }
  SUBCASE("random multi-head case normalizes within 1e-12") {
    nn::MultiHeadAttention attn = nn::MultiHeadAttention::make(8, 2, rng);
    const nn::Mat q = testutil::random_matrix(4, 8, rng);
    const nn::Mat kv = testutil::random_matrix(6, 8, rng);
    const nn::Mat w = attention_heatmap(q, kv, attn);
    for (int i = 0; i < 4; ++i)
      CHECK(std::abs(w.row(i).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("jointly permuting keys and values leaves the output unchanged") {
  RandomSource rng(5);
  nn::MultiHeadAttention attn = nn::MultiHeadAttention::make(8, 2, rng);
  const nn::Mat q = testutil::random_matrix(3, 8, rng);
  const nn::Mat kv = testutil::random_matrix(5, 8, rng);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  nn::Mat kv_perm(5, 8);
  for (int i = 0; i < 5; ++i)
    kv_perm.row(i) = kv.row(perm[static_cast<size_t>(i)]);
  const nn::Mat a = cross_attention(q, kv, kv, attn);
  const nn::Mat b = cross_attention(q, kv_perm, kv_perm, attn);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("fusion branches satisfy the shape and finiteness contract") {
  RandomSource rng(6);
  GifParams params = GifParams::make(8, 1, 1, rng);

  const nn::Mat img_rows = testutil::random_matrix(4, 8, rng);
  const nn::Mat gen_rows = testutil::random_matrix(3, 8, rng);
  const nn::Mat txt_rows = testutil::random_matrix(5, 8, rng);

  const TokenSequence img = make_seq(img_rows, SequenceKind::kImage);
  const TokenSequence gen = make_seq(gen_rows, SequenceKind::kGenerated);
  const TokenSequence txt = make_seq(txt_rows, SequenceKind::kText, 4);

  GifBranch::Cache c1, c2;
  const Eigen::VectorXd vf = fuse_image(img, gen, params, c1);
  const Eigen::VectorXd tf = fuse_text(txt, gen, params, c2);
  CHECK(vf.size() == 8);
  CHECK(tf.size() == 8);
  CHECK(vf.allFinite());
  CHECK(tf.allFinite());

  SUBCASE("identical generated and image sequences stay finite") {
    GifBranch::Cache c3;
    const Eigen::VectorXd self = fuse_image(img, img, params, c3);
    CHECK(self.allFinite());
  }
  SUBCASE("single-row generated sequence broadcasts") {
    const TokenSequence gen1 =
        make_seq(gen_rows.topRows(1), SequenceKind::kGenerated);
    GifBranch::Cache c3, c4;
    const Eigen::VectorXd a = fuse_image(img, gen1, params, c3);
    CHECK(a.allFinite());
    // With one key every query row attends to the same value, so the CA
    // output rows coincide before the transformer.
    nn::LayerNorm::Cache lq, lkv;
    const nn::Mat q = params.image_branch.ln_q.forward(img_rows, lq);
    const nn::Mat kv = params.image_branch.ln_kv.forward(gen_rows.topRows(1),
                                                         lkv);
    const nn::Mat ca = cross_attention(q, kv, kv, params.image_branch.ca);
    for (int i = 1; i < ca.rows(); ++i)
      CHECK((ca.row(i) - ca.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("dimension mismatches are rejected") {
    const TokenSequence bad =
        make_seq(testutil::random_matrix(2, 4, rng), SequenceKind::kGenerated);
    GifBranch::Cache c3;
    CHECK_THROWS_AS(fuse_image(img, bad, params, c3), ValidationError);
  }
}

TEST_CASE("branch output matches an independent composition transcription") {
  // d=8, one head, one fusion layer: LN -> CA -> pre-norm transformer block,
  // all transcribed directly from the layer parameters.
  RandomSource rng(7);
  GifParams params = GifParams::make(8, 1, 1, rng);
  // Give the zero-initialized residual projections real values so the
  // transcription exercises the whole block.
  auto& block = params.image_branch.encoder.blocks[0];
  block.attn.w_o = testutil::random_matrix(8, 8, rng, 0.3);
  block.fc2.weight = testutil::random_matrix(32, 8, rng, 0.3);

  const nn::Mat img_rows = testutil::random_matrix(3, 8, rng);
  const nn::Mat gen_rows = testutil::random_matrix(4, 8, rng);

  GifBranch::Cache cache;
  const nn::Mat fused = params.image_branch.forward(img_rows, gen_rows, cache);

  // Reference path.
  auto layer_norm_ref = [](const nn::Mat& x, const nn::LayerNorm& ln) {
    nn::Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mean = x.row(i).mean();
      const double var = (x.row(i).array() - mean).square().mean();
      out.row(i) =
          ((x.row(i).array() - mean) / std::sqrt(var + ln.eps)) *
              ln.gamma.row(0).array() +
          ln.beta.row(0).array();
    }
    return out;
  };
  auto gelu_ref = [](const nn::Mat& x) {
    return nn::Mat(x.unaryExpr([](double v) {
      return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }));
  };

  const nn::Mat q = layer_norm_ref(img_rows, params.image_branch.ln_q);
  const nn::Mat kv = layer_norm_ref(gen_rows, params.image_branch.ln_kv);
  const nn::Mat attended = testutil::oracle::cross_attention_reference(
      q, kv, kv, params.image_branch.ca.w_q, params.image_branch.ca.w_k,
      params.image_branch.ca.w_v, params.image_branch.ca.w_o);

  const nn::Mat u = layer_norm_ref(attended, block.ln1);
  const nn::Mat x1 =
      attended + testutil::oracle::cross_attention_reference(
                     u, u, u, block.attn.w_q, block.attn.w_k, block.attn.w_v,
                     block.attn.w_o);
  const nn::Mat v = layer_norm_ref(x1, block.ln2);
  nn::Mat h = v * block.fc1.weight;
  h.rowwise() += block.fc1.bias.row(0);
  nn::Mat mlp = gelu_ref(h) * block.fc2.weight;
  mlp.rowwise() += block.fc2.bias.row(0);
  const nn::Mat expected = x1 + mlp;

  CHECK((fused - expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("finite differences confirm every fusion parameter gradient") {
  RandomSource rng(8);
  const int checks = 20;
  for (int iter = 0; iter < checks; ++iter) {
    GifParams params = GifParams::make(8, 1, 1, rng);
    // Perturb the zero-initialized residuals so no gradient path is trivially
    // dead.
    for (auto* branch : {&params.image_branch, &params.text_branch})
      for (auto& block : branch->encoder.blocks) {
        block.attn.w_o = testutil::random_matrix(8, 8, rng, 0.2);
        block.fc2.weight = testutil::random_matrix(32, 8, rng, 0.2);
      }

    const nn::Mat img_rows = testutil::random_matrix(3, 8, rng);
    const nn::Mat gen_rows = testutil::random_matrix(2, 8, rng);
    const nn::Mat txt_rows = testutil::random_matrix(3, 8, rng);
    const Eigen::VectorXd head_v = testutil::random_vector(8, rng);
    const Eigen::VectorXd head_t = testutil::random_vector(8, rng);
    const TokenSequence img = make_seq(img_rows, SequenceKind::kImage);
    const TokenSequence gen = make_seq(gen_rows, SequenceKind::kGenerated);
    const TokenSequence txt = make_seq(txt_rows, SequenceKind::kText, 2);

    std::vector<nn::ParamRef> all;
    params.collect("gif", all);

    auto loss = [&]() {
      GifBranch::Cache c1, c2;
      return fuse_image(img, gen, params, c1).dot(head_v) +
             fuse_text(txt, gen, params, c2).dot(head_t);
    };

    nn::zero_grads(all);
    GifBranch::Cache c1, c2;
    fuse_image(img, gen, params, c1);
    fuse_text(txt, gen, params, c2);
    nn::Mat g_img = nn::Mat::Zero(3, 8);
    g_img.row(0) = head_v.transpose();
    params.image_branch.backward(g_img, c1);
    nn::Mat g_txt = nn::Mat::Zero(3, 8);
    g_txt.row(2) = head_t.transpose();
    params.text_branch.backward(g_txt, c2);

    double max_rel = 0.0;
    for (const auto& p : all)
      for (Eigen::Index i = 0; i < p.value->rows(); ++i)
        for (Eigen::Index j = 0; j < p.value->cols(); ++j) {
          const double fd = testutil::central_diff(loss, &(*p.value)(i, j));
          max_rel = std::max(max_rel,
                             testutil::rel_error((*p.grad)(i, j), fd));
        }
    CHECK(max_rel < 1e-3);
  }
}

TEST_CASE("fused outputs stay finite for rough inputs") {
  RandomSource rng(9);
  GifParams params = GifParams::make(8, 2, 2, rng);
  nn::Mat big = testutil::random_matrix(3, 8, rng, 50.0);
  nn::Mat tiny = nn::Mat::Zero(2, 8);
  GifBranch::Cache c1;
  const Eigen::VectorXd out = fuse_image(make_seq(big, SequenceKind::kImage),
                                         make_seq(tiny, SequenceKind::kGenerated),
                                         params, c1);
  CHECK(out.allFinite());
}

}  // TEST_SUITE
