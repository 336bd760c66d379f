// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gea/common.hpp"

namespace gea {

// Person identity. Ids are dense in [0, num_identities) within one manifest.
struct IdentityLabel {
  std::int32_t id = 0;
  bool operator==(const IdentityLabel&) const = default;
};

enum class Modality { kImage, kText, kGenerated };

const char* modality_name(Modality m);

using MatrixXfRM =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One global token plus L sequence tokens for a single sample in a single
// modality. Storage is float32, matching the on-disk format bit for bit.
struct FeatureBundle {
  Eigen::VectorXf global;  // d
  MatrixXfRM tokens;       // L x d
  Modality modality = Modality::kImage;

  int dim() const { return static_cast<int>(global.size()); }
  int num_tokens() const { return static_cast<int>(tokens.rows()); }

  // Throws ValidationError on dimension mismatch or non-finite entries.
  void validate() const;

  bool operator==(const FeatureBundle& other) const;
};

struct Sample {
  std::string sample_id;
  IdentityLabel identity;
  std::string text;
  std::string image_feature;                      // path or inline ref
  std::optional<std::string> text_feature;        // precomputed text tokens
  std::optional<std::string> generated_feature;   // absent until generated
};

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct DatasetManifest {
  int embedding_dim = 0;
  Split split = Split::kTrain;
  std::vector<Sample> records;
  // Directory feature refs resolve against; set at ingest time, not stored.
  std::filesystem::path base_dir;
};

// Reads and fully validates a manifest: schema, unique sample ids, dense
// identity labels, and the dimension of every referenced feature file.
DatasetManifest ingest_manifest(const std::filesystem::path& path);

// Serializes a manifest to its JSON schema (schema_version 1).
void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path);

// Loads a bundle from a path or an "inline:<base64>" ref. expected_dim < 0
// skips the dimension check. Corrupt data -> IoError; dimension mismatch ->
// ValidationError.
FeatureBundle load_feature_bundle(const std::string& ref, int expected_dim,
                                  Modality modality = Modality::kImage,
                                  const std::filesystem::path& base_dir = ".");

void write_feature_bundle(const FeatureBundle& bundle,
                          const std::filesystem::path& path);

// Encodes a bundle as an "inline:<base64>" ref (round-trips bit-exactly).
std::string make_inline_ref(const FeatureBundle& bundle);

}  // namespace gea
