// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gea/encoders.hpp"
#include "gea/feature_store.hpp"
#include "gea/gif_fusion.hpp"
#include "gea/retrieval_eval.hpp"
#include "gea/tal_loss.hpp"
#include "gea/tgte.hpp"

namespace gea {

struct TrainConfig {
  int batch_size = 64;
  int epochs = 60;
  double lr_backbone = 1e-5;
  double lr_fusion = 1e-4;
  int warmup_epochs = 5;
  double warmup_start_lr = 1e-6;
  TALConfig tal;
  MixSchedule mix;

  enum class Ablation { kBaseline, kTgteOnly, kGifOnly, kFull };
  Ablation ablation = Ablation::kFull;
  std::uint64_t seed = 42;

  // Resolved design choices, all overridable.
  enum class Decay { kCosine, kConstant };
  Decay decay = Decay::kCosine;
  double decay_floor = 0.1;  // cosine decays to decay_floor * base rate
  int ids_per_batch = 16;    // identity-aware sampler: P identities ...
  int texts_per_identity = 4;  // ... with Q texts each; P*Q == batch_size

  enum class MissingGenerated { kZeroSubstitute, kError };
  MissingGenerated missing_generated = MissingGenerated::kZeroSubstitute;

  // Frozen text features from the manifest, or the trainable toy tower fed
  // by the raw text strings. Image features are always frozen (the data
  // model carries no pixels).
  enum class TextTower { kFrozen, kToy };
  TextTower text_tower = TextTower::kFrozen;

  int gif_layers = 6;
  int gif_heads = 8;
  std::optional<TALConfig> tal_fusion;   // defaults to `tal`
  std::optional<double> eval_omega;      // defaults to mix.omega_end
  bool eval_fused_rerank = false;
  EncoderConfig encoder;  // toy text tower geometry (embed_dim tracks data)

  bool uses_mixing() const {
    return ablation == Ablation::kTgteOnly || ablation == Ablation::kFull;
  }
  bool uses_fusion() const {
    return ablation == Ablation::kGifOnly || ablation == Ablation::kFull;
  }
  const TALConfig& fusion_tal() const {
    return tal_fusion ? *tal_fusion : tal;
  }
  // Mix weight used at evaluation time for this ablation.
  double resolve_eval_omega() const {
    if (!uses_mixing()) return 0.0;
    return eval_omega ? *eval_omega : mix.omega_end;
  }
  void validate() const;
};

const char* ablation_name(TrainConfig::Ablation a);
TrainConfig::Ablation ablation_from_name(const std::string& name);

// Exact JSON mirror of TrainConfig (field names match the struct).
std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& json_text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string config_digest(const TrainConfig& config);

enum class ParamGroup { kBackbone, kFusion };

// Warmup rises linearly from warmup_start_lr to the group's base rate over
// warmup_epochs, then the configured decay applies.
double lr_at(const TrainConfig& config, int epoch, ParamGroup group);

// All learnable state. The frozen adapter starts at identity so an untrained
// model scores raw features; generated features share the image projection.
struct ModelState {
  int dim = 0;
  TrainConfig config;
  nn::Linear image_proj;
  nn::Linear text_proj;
  std::optional<TextEncoder> text_encoder;  // present in toy text mode
  GifParams gif;

  static ModelState make(const TrainConfig& config, int dim);

  std::vector<nn::ParamRef> backbone_params();
  std::vector<nn::ParamRef> fusion_params();
  std::vector<nn::ParamRef> all_params();

  // Forward-only helpers (scratch caches, no gradient side effects).
  nn::Mat project_image_rows(const nn::Mat& rows) const;
  nn::Mat project_text_rows(const nn::Mat& rows) const;
  TokenSequence encode_text(const std::string& text) const;
};

struct AdamOptimizer {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t steps = 0;
  std::vector<nn::Mat> m, v;

  void init(const std::vector<nn::ParamRef>& params);
  void step(const std::vector<nn::ParamRef>& params,
            const std::vector<double>& lrs);
};

// In-memory dataset: feature bundles decoded to double-precision token
// sequences once, immutable afterwards.
struct SampleTensors {
  std::string sample_id;
  IdentityLabel identity;
  std::string text;
  TokenSequence image;
  std::optional<TokenSequence> text_feature;
  std::optional<TokenSequence> generated;
};

struct DatasetCache {
  int dim = 0;
  std::vector<SampleTensors> samples;

  static DatasetCache load(const DatasetManifest& manifest,
                           TrainConfig::TextTower text_tower);
};

TokenSequence sequence_from_bundle(const FeatureBundle& bundle);

// Identity-aware batches: P identities x Q samples each. Throws if fewer
// than P identities exist or any identity has no record.
std::vector<std::vector<int>> make_identity_batches(const DatasetCache& data,
                                                    int ids_per_batch,
                                                    int texts_per_identity,
                                                    RandomSource& rng);

// One optimizer step over a batch; returns the loss at the current
// parameters (before the update).
double train_step(ModelState& model, AdamOptimizer& opt,
                  const DatasetCache& data, const std::vector<int>& batch,
                  int epoch, const TrainConfig& config);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_rank1 = 0.0, val_rank5 = 0.0, val_rank10 = 0.0, val_map = 0.0;
  double lr_backbone = 0.0, lr_fusion = 0.0;
  double omega = 0.0;
};

struct FitResult {
  std::vector<EpochStats> history;
  double best_map = -1.0;
  int best_epoch = -1;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

// Full training loop: identity-aware batches, per-epoch val evaluation,
// best-by-mAP checkpointing. Deterministic for a fixed seed. `resume`
// continues bit-exactly from a checkpoint written by a previous fit;
// `stop_after` caps how many epochs this invocation runs (the config's
// epoch budget stays authoritative).
FitResult fit(const DatasetManifest& train_manifest,
              const DatasetManifest& val_manifest, const TrainConfig& config,
              const std::filesystem::path& out_dir,
              const std::optional<std::filesystem::path>& resume = {},
              const std::optional<int>& stop_after = {});

// Versioned binary checkpoint ("GEAC" magic): parameters, optimizer
// moments, epoch, config, RNG state. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path,
                     const ModelState& model, const AdamOptimizer& opt,
                     int epochs_completed, const RandomSource& rng,
                     double best_map, int best_epoch);

struct LoadedCheckpoint {
  ModelState model;
  AdamOptimizer opt;
  int epochs_completed = 0;
  RandomSource rng{0};
  double best_map = -1.0;
  int best_epoch = -1;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Scores every text query against the full image gallery with the model
// (mixing at `omega`; queries without a generated feature fall back to
// omega = 0) and computes the retrieval metrics.
RetrievalReport evaluate_with_model(const DatasetManifest& manifest,
                                    const ModelState& model, double omega,
                                    bool use_fused_rerank);

}  // namespace gea
