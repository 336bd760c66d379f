// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace gea {

void EncoderConfig::validate() const {
  if (embed_dim < 1 || heads < 1 || layers < 1)
    throw ValidationError("EncoderConfig: dims/heads/layers must be positive");
  if (embed_dim % heads != 0)
    throw ValidationError("EncoderConfig: embed_dim must divide by heads");
  if (patch_size < 1 || image_height % patch_size != 0 ||
      image_width % patch_size != 0)
    throw ValidationError(
        "EncoderConfig: image height/width must divide by patch_size");
  if (channels < 1)
    throw ValidationError("EncoderConfig: channels must be positive");
  if (max_text_len < 3)
    throw ValidationError("EncoderConfig: max_text_len must be >= 3");
  if (vocab_size < 1)
    throw ValidationError("EncoderConfig: vocab_size must be positive");
}

Eigen::VectorXd select_global(const TokenSequence& seq) {
  if (seq.rows.rows() < 1)
    throw ValidationError("select_global: empty sequence");
  if (seq.kind == SequenceKind::kText) {
    if (seq.eos_index < 0 || seq.eos_index >= seq.rows.rows())
      throw ValidationError("select_global: eos index out of range");
    return seq.rows.row(seq.eos_index);
  }
  return seq.rows.row(0);
}

Eigen::MatrixXd patchify(const ImageArray& image, int patch_size) {
  if (patch_size < 1)
    throw ValidationError("patchify: patch size must be positive");
  if (image.height % patch_size != 0 || image.width % patch_size != 0)
    throw ValidationError("patchify: image " + std::to_string(image.height) +
                          "x" + std::to_string(image.width) +
                          " not divisible by patch size " +
                          std::to_string(patch_size));
  if (image.data.size() != static_cast<size_t>(image.height) * image.width *
                               image.channels)
    throw ValidationError("patchify: pixel buffer size mismatch");

  const int rows = image.height / patch_size;
  const int cols = image.width / patch_size;
  const int patch_dim = patch_size * patch_size * image.channels;
  Eigen::MatrixXd patches(rows * cols, patch_dim);
  for (int pr = 0; pr < rows; ++pr)
    for (int pc = 0; pc < cols; ++pc) {
      int k = 0;
      for (int h = 0; h < patch_size; ++h)
        for (int w = 0; w < patch_size; ++w)
          for (int c = 0; c < image.channels; ++c)
            patches(pr * cols + pc, k++) =
                image.at(pr * patch_size + h, pc * patch_size + w, c);
    }
  return patches;
}

std::vector<int> tokenize_words(const std::string& text, int vocab_size) {
  std::string lowered(text.size(), '\0');
  std::transform(text.begin(), text.end(), lowered.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  std::istringstream words(lowered);
  std::vector<int> ids;
  std::string word;
  while (words >> word)
    ids.push_back(static_cast<int>(fnv1a64(word) %
                                   static_cast<std::uint64_t>(vocab_size)));
  return ids;
}

// ---------------------------------------------------------------------------
// ImageEncoder

ImageEncoder ImageEncoder::make(const EncoderConfig& config,
                                RandomSource& rng) {
  config.validate();
  ImageEncoder enc;
  enc.config = config;
  const int d = config.embed_dim;
  const double std_embed = 1.0 / std::sqrt(static_cast<double>(config.patch_dim()));
  enc.patch_embed = nn::Linear::make(config.patch_dim(), d, std_embed, rng);
  enc.cls = nn::Mat(1, d);
  for (int j = 0; j < d; ++j) enc.cls(0, j) = 0.02 * rng.normal();
  enc.pos = nn::Mat(config.num_patches() + 1, d);
  for (int i = 0; i < enc.pos.rows(); ++i)
    for (int j = 0; j < d; ++j) enc.pos(i, j) = 0.02 * rng.normal();
  enc.g_cls = nn::Mat::Zero(1, d);
  enc.g_pos = nn::Mat::Zero(enc.pos.rows(), d);
  enc.encoder = nn::TransformerEncoder::make(d, config.heads, config.layers,
                                             rng);
  return enc;
}

TokenSequence ImageEncoder::forward(const Eigen::MatrixXd& patches,
                                    Cache& cache) const {
  const int M = config.num_patches();
  if (patches.rows() != M || patches.cols() != config.patch_dim())
    throw ValidationError(
        "ImageEncoder: expected " + std::to_string(M) + "x" +
        std::to_string(config.patch_dim()) + " patches, got " +
        std::to_string(patches.rows()) + "x" + std::to_string(patches.cols()));

  nn::Mat x(M + 1, config.embed_dim);
  x.row(0) = cls.row(0);
  x.bottomRows(M) = patch_embed.forward(patches, cache.embed);
  x += pos;

  TokenSequence seq;
  seq.kind = SequenceKind::kImage;
  seq.rows = encoder.forward(x, cache.encoder);
  if (!seq.rows.allFinite())
    throw NumericError("ImageEncoder: non-finite output");
  return seq;
}

TokenSequence ImageEncoder::forward(const ImageArray& image,
                                    Cache& cache) const {
  return forward(patchify(image, config.patch_size), cache);
}

void ImageEncoder::backward(const Eigen::MatrixXd& g_rows,
                            const Cache& cache) {
  const nn::Mat g_x = encoder.backward(g_rows, cache.encoder);
  g_pos += g_x;
  g_cls.row(0) += g_x.row(0);
  patch_embed.backward(g_x.bottomRows(g_x.rows() - 1), cache.embed);
}

void ImageEncoder::collect(const std::string& prefix,
                           std::vector<nn::ParamRef>& out) {
  out.push_back({prefix + ".cls", &cls, &g_cls});
  out.push_back({prefix + ".pos", &pos, &g_pos});
  patch_embed.collect(prefix + ".patch_embed", out);
  encoder.collect(prefix + ".encoder", out);
}

// ---------------------------------------------------------------------------
// TextEncoder

TextEncoder TextEncoder::make(const EncoderConfig& config, RandomSource& rng) {
  config.validate();
  TextEncoder enc;
  enc.config = config;
  const int d = config.embed_dim;
  enc.token_embedding = nn::Mat(config.vocab_size + 2, d);
  for (int i = 0; i < enc.token_embedding.rows(); ++i)
    for (int j = 0; j < d; ++j) enc.token_embedding(i, j) = 0.02 * rng.normal();
  enc.pos = nn::Mat(config.max_text_len, d);
  for (int i = 0; i < enc.pos.rows(); ++i)
    for (int j = 0; j < d; ++j) enc.pos(i, j) = 0.02 * rng.normal();
  enc.g_token_embedding = nn::Mat::Zero(enc.token_embedding.rows(), d);
  enc.g_pos = nn::Mat::Zero(enc.pos.rows(), d);
  enc.encoder = nn::TransformerEncoder::make(d, config.heads, config.layers,
                                             rng);
  return enc;
}

TokenSequence TextEncoder::forward(const std::string& text,
                                   Cache& cache) const {
  if (text.empty()) throw ValidationError("TextEncoder: empty text");
  const int sos_id = config.vocab_size;
  const int eos_id = config.vocab_size + 1;

  std::vector<int> words = tokenize_words(text, config.vocab_size);
  const size_t max_words = static_cast<size_t>(config.max_text_len) - 2;
  if (words.size() > max_words) words.resize(max_words);

  cache.ids.clear();
  cache.ids.push_back(sos_id);
  cache.ids.insert(cache.ids.end(), words.begin(), words.end());
  cache.ids.push_back(eos_id);

  const int L = static_cast<int>(cache.ids.size());
  nn::Mat x(L, config.embed_dim);
  for (int i = 0; i < L; ++i)
    x.row(i) = token_embedding.row(cache.ids[static_cast<size_t>(i)]) +
               pos.row(i);

  TokenSequence seq;
  seq.kind = SequenceKind::kText;
  seq.eos_index = L - 1;
  seq.rows = encoder.forward(x, cache.encoder);
  if (!seq.rows.allFinite())
    throw NumericError("TextEncoder: non-finite output");
  return seq;
}

void TextEncoder::backward(const Eigen::MatrixXd& g_rows, const Cache& cache) {
  const nn::Mat g_x = encoder.backward(g_rows, cache.encoder);
  for (int i = 0; i < g_x.rows(); ++i) {
    g_token_embedding.row(cache.ids[static_cast<size_t>(i)]) += g_x.row(i);
    g_pos.row(i) += g_x.row(i);
  }
}

void TextEncoder::collect(const std::string& prefix,
                          std::vector<nn::ParamRef>& out) {
  out.push_back({prefix + ".token_embedding", &token_embedding,
                 &g_token_embedding});
  out.push_back({prefix + ".pos", &pos, &g_pos});
  encoder.collect(prefix + ".encoder", out);
}

}  // namespace gea
