// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gea/nn.hpp"

namespace gea {

struct EncoderConfig {
  int embed_dim = 512;
  int heads = 8;
  int layers = 2;
  int patch_size = 16;
  int image_height = 384;
  int image_width = 128;
  int channels = 3;
  int max_text_len = 77;   // total budget including sos/eos markers
  int vocab_size = 1000;

  int num_patches() const {
    return image_height * image_width / (patch_size * patch_size);
  }
  int patch_dim() const { return patch_size * patch_size * channels; }
  void validate() const;
};

enum class SequenceKind { kImage, kText, kGenerated };

// Encoder output: L x d token rows. Image and generated sequences carry the
// class token at row 0; text sequences record where the eos marker landed.
struct TokenSequence {
  Eigen::MatrixXd rows;
  SequenceKind kind = SequenceKind::kImage;
  int eos_index = 0;
};

// Returns the global token: row 0 for image/generated, the eos row for text.
Eigen::VectorXd select_global(const TokenSequence& seq);

// Dense H x W x C pixel array, row-major (h, w, c).
struct ImageArray {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  double at(int h, int w, int c) const {
    return data[static_cast<size_t>((h * width + w) * channels + c)];
  }
  double& at(int h, int w, int c) {
    return data[static_cast<size_t>((h * width + w) * channels + c)];
  }
};

// Splits the image into M = H*W/P^2 non-overlapping patches, row-major patch
// order, each flattened row-major (p_h, p_w, c).
Eigen::MatrixXd patchify(const ImageArray& image, int patch_size);

// Desk tokenizer: lowercase, whitespace split, FNV hash into the vocabulary.
// Marker ids sit past the word vocabulary: sos = vocab_size, eos = vocab+1.
std::vector<int> tokenize_words(const std::string& text, int vocab_size);

struct ImageEncoder {
  EncoderConfig config;
  nn::Linear patch_embed;  // patch_dim -> d
  nn::Mat cls;             // 1 x d
  nn::Mat pos;             // (M+1) x d
  nn::Mat g_cls, g_pos;
  nn::TransformerEncoder encoder;

  struct Cache {
    nn::Linear::Cache embed;
    nn::TransformerEncoder::Cache encoder;
  };

  static ImageEncoder make(const EncoderConfig& config, RandomSource& rng);
  TokenSequence forward(const Eigen::MatrixXd& patches, Cache& cache) const;
  TokenSequence forward(const ImageArray& image, Cache& cache) const;
  void backward(const Eigen::MatrixXd& g_rows, const Cache& cache);
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
};

struct TextEncoder {
  EncoderConfig config;
  nn::Mat token_embedding;  // (vocab + 2) x d
  nn::Mat pos;              // max_text_len x d
  nn::Mat g_token_embedding, g_pos;
  nn::TransformerEncoder encoder;

  struct Cache {
    std::vector<int> ids;  // embedding rows used, in sequence order
    nn::TransformerEncoder::Cache encoder;
  };

  static TextEncoder make(const EncoderConfig& config, RandomSource& rng);
  TokenSequence forward(const std::string& text, Cache& cache) const;
  void backward(const Eigen::MatrixXd& g_rows, const Cache& cache);
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
};

}  // namespace gea
