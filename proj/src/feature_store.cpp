// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace gea {

namespace {

constexpr char kMagic[4] = {'G', 'E', 'A', 'F'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr const char* kInlinePrefix = "inline:";

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> serialize_bundle(const FeatureBundle& bundle) {
  const std::uint32_t L = static_cast<std::uint32_t>(bundle.tokens.rows());
  const std::uint32_t d = static_cast<std::uint32_t>(bundle.global.size());
  std::vector<unsigned char> out;
  out.reserve(16 + static_cast<size_t>(L + 1) * d * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  append_u32(out, kFormatVersion);
  append_u32(out, L);
  append_u32(out, d);
  auto append_floats = [&out](const float* p, size_t n) {
    const size_t pos = out.size();
    out.resize(pos + n * 4);
    std::memcpy(out.data() + pos, p, n * 4);
  };
  append_floats(bundle.global.data(), d);
  if (L > 0) append_floats(bundle.tokens.data(), static_cast<size_t>(L) * d);
  return out;
}

FeatureBundle parse_bundle(const std::vector<unsigned char>& data,
                           const std::string& what) {
  if (data.size() < 16) throw IoError(what + ": truncated header");
  if (std::memcmp(data.data(), kMagic, 4) != 0)
    throw IoError(what + ": bad magic bytes");
  const std::uint32_t version = read_u32(data.data() + 4);
  if (version != kFormatVersion)
    throw IoError(what + ": unsupported format version " +
                  std::to_string(version));
  const std::uint32_t L = read_u32(data.data() + 8);
  const std::uint32_t d = read_u32(data.data() + 12);
  if (d == 0) throw IoError(what + ": zero embedding dimension");
  const size_t expected = 16 + static_cast<size_t>(L + 1) * d * 4;
  if (data.size() != expected)
    throw IoError(what + ": payload size mismatch (expected " +
                  std::to_string(expected) + " bytes, got " +
                  std::to_string(data.size()) + ")");

  FeatureBundle bundle;
  bundle.global.resize(d);
  bundle.tokens.resize(L, d);
  std::memcpy(bundle.global.data(), data.data() + 16, d * 4);
  if (L > 0)
    std::memcpy(bundle.tokens.data(), data.data() + 16 + d * 4,
                static_cast<size_t>(L) * d * 4);

  auto finite = [](const float* p, size_t n) {
    return std::all_of(p, p + n, [](float x) { return std::isfinite(x); });
  };
  if (!finite(bundle.global.data(), d) ||
      (L > 0 && !finite(bundle.tokens.data(), static_cast<size_t>(L) * d)))
    throw IoError(what + ": non-finite payload");
  return bundle;
}

}  // namespace

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kImage: return "image";
    case Modality::kText: return "text";
    case Modality::kGenerated: return "generated";
  }
  return "unknown";
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ValidationError("unknown split '" + name + "'");
}

void FeatureBundle::validate() const {
  if (tokens.rows() > 0 && tokens.cols() != global.size())
    throw ValidationError(
        "FeatureBundle: token dimension " + std::to_string(tokens.cols()) +
        " does not match global dimension " + std::to_string(global.size()));
  if (!global.allFinite() || (tokens.size() > 0 && !tokens.allFinite()))
    throw ValidationError("FeatureBundle: non-finite entries");
}

bool FeatureBundle::operator==(const FeatureBundle& other) const {
  if (modality != other.modality) return false;
  if (global.size() != other.global.size()) return false;
  if (tokens.rows() != other.tokens.rows() ||
      tokens.cols() != other.tokens.cols())
    return false;
  // Bit-level comparison; -0.0f vs 0.0f and NaN payloads matter for the
  // round-trip contract.
  if (global.size() > 0 &&
      std::memcmp(global.data(), other.global.data(), global.size() * 4) != 0)
    return false;
  if (tokens.size() > 0 &&
      std::memcmp(tokens.data(), other.tokens.data(), tokens.size() * 4) != 0)
    return false;
  return true;
}

FeatureBundle load_feature_bundle(const std::string& ref, int expected_dim,
                                  Modality modality,
                                  const std::filesystem::path& base_dir) {
  FeatureBundle bundle;
  if (ref.rfind(kInlinePrefix, 0) == 0) {
    bundle = parse_bundle(
        base64_decode(std::string_view(ref).substr(std::strlen(kInlinePrefix))),
        "inline feature");
  } else {
    std::filesystem::path path(ref);
    if (path.is_relative()) path = base_dir / path;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file '" + path.string() + "'");
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    bundle = parse_bundle(data, path.string());
  }
  bundle.modality = modality;
  if (expected_dim >= 0 && bundle.dim() != expected_dim)
    throw ValidationError("feature '" + ref + "' has dimension " +
                          std::to_string(bundle.dim()) + ", expected " +
                          std::to_string(expected_dim));
  return bundle;
}

void write_feature_bundle(const FeatureBundle& bundle,
                          const std::filesystem::path& path) {
  bundle.validate();
  const auto data = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string make_inline_ref(const FeatureBundle& bundle) {
  return std::string(kInlinePrefix) + base64_encode(serialize_bundle(bundle));
}

DatasetManifest ingest_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest '" + path.string() +
                          "': JSON parse error: " + e.what());
  }

  DatasetManifest manifest;
  manifest.base_dir = path.has_parent_path() ? path.parent_path()
                                             : std::filesystem::path(".");
  try {
    manifest.embedding_dim = doc.at("embedding_dim").get<int>();
    manifest.split = split_from_name(doc.at("split").get<std::string>());
    for (const auto& rec : doc.at("records")) {
      Sample s;
      s.sample_id = rec.at("sample_id").get<std::string>();
      s.identity.id = rec.at("identity").get<std::int32_t>();
      s.text = rec.at("text").get<std::string>();
      s.image_feature = rec.at("image_feature").get<std::string>();
      if (rec.contains("text_feature") && !rec.at("text_feature").is_null())
        s.text_feature = rec.at("text_feature").get<std::string>();
      if (rec.contains("generated_feature") &&
          !rec.at("generated_feature").is_null())
        s.generated_feature = rec.at("generated_feature").get<std::string>();
      manifest.records.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest '" + path.string() +
                          "': schema violation: " + e.what());
  }

  if (manifest.embedding_dim <= 0)
    throw ValidationError("manifest: embedding_dim must be positive");

  std::set<std::string> seen_ids;
  std::set<std::int32_t> identities;
  for (const auto& s : manifest.records) {
    if (s.sample_id.empty())
      throw ValidationError("manifest: record with empty sample_id");
    if (!seen_ids.insert(s.sample_id).second)
      throw ValidationError("manifest: duplicate sample_id '" + s.sample_id +
                            "'");
    if (s.identity.id < 0)
      throw ValidationError("manifest: sample '" + s.sample_id +
                            "' has negative identity");
    if (s.text.empty())
      throw ValidationError("manifest: sample '" + s.sample_id +
                            "' has empty text");
    if (s.image_feature.empty())
      throw ValidationError("manifest: sample '" + s.sample_id +
                            "' has empty image_feature ref");
    identities.insert(s.identity.id);
  }

  // Identity labels must be dense in [0, num_identities).
  if (!identities.empty()) {
    const auto max_id = *identities.rbegin();
    if (static_cast<size_t>(max_id) + 1 != identities.size())
      throw ValidationError(
          "manifest: identity labels are not dense in [0, " +
          std::to_string(identities.size()) + ")");
  }

  // Deep validation: every referenced feature must exist, parse, and match
  // the manifest dimension.
  for (const auto& s : manifest.records) {
    try {
      load_feature_bundle(s.image_feature, manifest.embedding_dim,
                          Modality::kImage, manifest.base_dir);
      if (s.text_feature)
        load_feature_bundle(*s.text_feature, manifest.embedding_dim,
                            Modality::kText, manifest.base_dir);
      if (s.generated_feature)
        load_feature_bundle(*s.generated_feature, manifest.embedding_dim,
                            Modality::kGenerated, manifest.base_dir);
    } catch (const IoError& e) {
      throw ValidationError("manifest: sample '" + s.sample_id +
                            "': " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("manifest: sample '" + s.sample_id +
                            "': " + e.what());
    }
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["embedding_dim"] = manifest.embedding_dim;
  doc["split"] = split_name(manifest.split);
  doc["records"] = nlohmann::json::array();
  for (const auto& s : manifest.records) {
    nlohmann::json rec;
    rec["sample_id"] = s.sample_id;
    rec["identity"] = s.identity.id;
    rec["text"] = s.text;
    rec["image_feature"] = s.image_feature;
    rec["text_feature"] = s.text_feature ? nlohmann::json(*s.text_feature)
                                         : nlohmann::json(nullptr);
    rec["generated_feature"] =
        s.generated_feature ? nlohmann::json(*s.generated_feature)
                            : nlohmann::json(nullptr);
    doc["records"].push_back(std::move(rec));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace gea
