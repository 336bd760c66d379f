// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gea/feature_store.hpp"

namespace gea {

// Latent vector with its flow time, integrated from t = 1 (noise) down to
// t = 0 (data).
struct LatentState {
  Eigen::VectorXd z;
  double t = 1.0;
};

struct GenerationConfig {
  int steps = 28;
  double guidance_scale = 7.0;
  int width = 1024;    // recorded metadata only at desk scale
  int height = 336;
  std::string positive_suffix = "pedestrian";
  std::string negative_prompt = "cartoon";
  std::uint64_t seed = 0;

  void validate() const;
};

// Velocity predictor v(z, t, c). Output dimension must match the latent.
class VelocityField {
public:
  virtual ~VelocityField() = default;
  virtual Eigen::VectorXd evaluate(const Eigen::VectorXd& z, double t,
                                   const Eigen::VectorXd& c) const = 0;
};

// Maps a fully denoised latent to a feature bundle.
class Decoder {
public:
  virtual ~Decoder() = default;
  virtual int latent_dim() const = 0;
  virtual FeatureBundle decode(const Eigen::VectorXd& z0) const = 0;
};

// One explicit Euler update: z' = z - dt * v(z, t, c), t' = t - dt clamped
// at 0. Requires t - dt >= -1e-9.
LatentState euler_step(const LatentState& state, const VelocityField& field,
                       const Eigen::VectorXd& c, double dt);

// Classifier-free guidance: v_u + g * (v_c - v_u).
Eigen::VectorXd guided_velocity(const VelocityField& field,
                                const Eigen::VectorXd& z, double t,
                                const Eigen::VectorXd& c_cond,
                                const Eigen::VectorXd& c_uncond, double g);

// Integrates from the given state to t = 0 in `steps` equal Euler steps of
// the guided velocity. Appends each post-step time to `times` when provided.
LatentState integrate(LatentState state, const VelocityField& field,
                      const Eigen::VectorXd& c_cond,
                      const Eigen::VectorXd& c_uncond, double guidance,
                      int steps, std::vector<double>* times = nullptr);

// Draws z_1 ~ N(0, I) from the config seed, integrates, and decodes.
// Deterministic for a fixed (seed, config, field, decoder).
FeatureBundle sample(const GenerationConfig& config,
                     const VelocityField& field, const Decoder& decoder,
                     const Eigen::VectorXd& c_cond,
                     const Eigen::VectorXd& c_uncond);

// (positive, negative): positive is the text plus ", <suffix>" (separator
// suppressed for an empty suffix); negative comes from the config.
std::pair<std::string, std::string> build_prompt(
    const std::string& text, const GenerationConfig& config);

// Deterministic hash-seeded embedding of a prompt string.
Eigen::VectorXd prompt_conditioning(const std::string& prompt, int dim);

// Fixed seeded linear velocity field: v = scale * (Wz z + Wc c). Stands in
// for a learned predictor at desk scale.
class SyntheticVelocityField : public VelocityField {
public:
  SyntheticVelocityField(int latent_dim, int cond_dim, std::uint64_t seed,
                         double scale = 0.05);
  Eigen::VectorXd evaluate(const Eigen::VectorXd& z, double t,
                           const Eigen::VectorXd& c) const override;

private:
  Eigen::MatrixXd w_z_, w_c_;
  double scale_;
};

// Fixed seeded linear map from latent space to a one-token feature bundle.
class LinearDecoder : public Decoder {
public:
  LinearDecoder(int latent_dim, int feature_dim, std::uint64_t seed);
  int latent_dim() const override { return static_cast<int>(a_global_.cols()); }
  FeatureBundle decode(const Eigen::VectorXd& z0) const override;

private:
  Eigen::MatrixXd a_global_, a_token_;
};

// Generates one bundle per record (skipping records that already have one
// unless overwrite): writes DIR/<sample_id>_gen.geaf files and returns the
// manifest with updated generated_feature refs.
DatasetManifest sample_flow_over_manifest(const DatasetManifest& manifest,
                                          const GenerationConfig& config,
                                          const std::filesystem::path& out_dir,
                                          bool overwrite = true);

}  // namespace gea
