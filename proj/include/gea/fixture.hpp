// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "gea/feature_store.hpp"

namespace gea {

// Synthetic identity dataset: one well-separated anchor vector per identity;
// per-sample image/text/generated features are noisy copies of the anchor.
// Generated features share part of the text feature's noise (but less of
// it), emulating text-conditioned generation. noise = 0 makes all features
// equal their anchor.
struct FixtureConfig {
  int num_identities = 32;
  int texts_per_identity = 4;
  int dim = 512;
  double noise = 0.0;
  std::uint64_t seed = 0;

  int tokens_per_bundle = 1;  // sequence tokens in addition to the global

  // Share of noise amplitude inside the anchor span (not removable by any
  // linear projection) vs. its orthogonal complement (removable).
  double span_noise_fraction = 0.35;
  // Generated noise = corr * text noise + fresh * (independent noise).
  double generated_text_corr = 0.5;
  double generated_fresh_noise = 0.35;

  void validate() const;
};

struct FixtureResult {
  std::filesystem::path train_manifest_path;
  std::filesystem::path val_manifest_path;
  DatasetManifest train;
  DatasetManifest val;
};

// Writes features/ plus train.json and val.json (same records, split labels
// differ) under out_dir. Byte-identical output for a fixed config.
FixtureResult make_fixture(const FixtureConfig& config,
                           const std::filesystem::path& out_dir);

}  // namespace gea
