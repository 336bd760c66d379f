// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/flow_sampler.hpp"

#include <cmath>

namespace gea {

void GenerationConfig::validate() const {
  if (steps < 1) throw ValidationError("GenerationConfig: steps must be >= 1");
  if (guidance_scale < 0.0)
    throw ValidationError("GenerationConfig: guidance_scale must be >= 0");
  if (width < 1 || height < 1)
    throw ValidationError("GenerationConfig: width/height must be positive");
}

LatentState euler_step(const LatentState& state, const VelocityField& field,
                       const Eigen::VectorXd& c, double dt) {
  if (dt < 0.0) throw ValidationError("euler_step: dt must be >= 0");
  if (state.t - dt < -1e-9)
    throw ValidationError("euler_step: step would overshoot t = 0");
  const Eigen::VectorXd v = field.evaluate(state.z, state.t, c);
  if (v.size() != state.z.size())
    throw NumericError("euler_step: velocity dimension mismatch");
  if (!v.allFinite()) throw NumericError("euler_step: non-finite velocity");
  LatentState next;
  next.z = state.z - dt * v;
  next.t = std::max(0.0, state.t - dt);
  return next;
}

Eigen::VectorXd guided_velocity(const VelocityField& field,
                                const Eigen::VectorXd& z, double t,
                                const Eigen::VectorXd& c_cond,
                                const Eigen::VectorXd& c_uncond, double g) {
  if (g < 0.0) throw ValidationError("guided_velocity: g must be >= 0");
  const Eigen::VectorXd v_cond = field.evaluate(z, t, c_cond);
  const Eigen::VectorXd v_uncond = field.evaluate(z, t, c_uncond);
  return v_uncond + g * (v_cond - v_uncond);
}

namespace {

// Wraps the guidance combination so integrate() can reuse euler_step.
class GuidedField : public VelocityField {
public:
  GuidedField(const VelocityField& inner, const Eigen::VectorXd& c_cond,
              const Eigen::VectorXd& c_uncond, double g)
      : inner_(inner), c_cond_(c_cond), c_uncond_(c_uncond), g_(g) {}

  Eigen::VectorXd evaluate(const Eigen::VectorXd& z, double t,
                           const Eigen::VectorXd&) const override {
    return guided_velocity(inner_, z, t, c_cond_, c_uncond_, g_);
  }

private:
  const VelocityField& inner_;
  const Eigen::VectorXd& c_cond_;
  const Eigen::VectorXd& c_uncond_;
  double g_;
};

}  // namespace

LatentState integrate(LatentState state, const VelocityField& field,
                      const Eigen::VectorXd& c_cond,
                      const Eigen::VectorXd& c_uncond, double guidance,
                      int steps, std::vector<double>* times) {
  if (steps < 1) throw ValidationError("integrate: steps must be >= 1");
  const GuidedField guided(field, c_cond, c_uncond, guidance);
  const Eigen::VectorXd unused;
  for (int k = 0; k < steps; ++k) {
    // Equal steps of 1/steps; dividing the remaining time keeps the final
    // step landing on t = 0 exactly instead of a round-off residue.
    const double dt = state.t / (steps - k);
    state = euler_step(state, guided, unused, dt);
    if (times) times->push_back(state.t);
  }
  return state;
}

FeatureBundle sample(const GenerationConfig& config,
                     const VelocityField& field, const Decoder& decoder,
                     const Eigen::VectorXd& c_cond,
                     const Eigen::VectorXd& c_uncond) {
  config.validate();
  RandomSource rng(config.seed);
  LatentState state;
  state.t = 1.0;
  state.z.resize(decoder.latent_dim());
  for (Eigen::Index i = 0; i < state.z.size(); ++i) state.z[i] = rng.normal();

  state = integrate(std::move(state), field, c_cond, c_uncond,
                    config.guidance_scale, config.steps);

  FeatureBundle bundle = decoder.decode(state.z);
  bundle.modality = Modality::kGenerated;
  bundle.validate();
  return bundle;
}

std::pair<std::string, std::string> build_prompt(
    const std::string& text, const GenerationConfig& config) {
  if (text.empty()) throw ValidationError("build_prompt: empty text");
  std::string positive = text;
  if (!config.positive_suffix.empty())
    positive += ", " + config.positive_suffix;
  return {positive, config.negative_prompt};
}

Eigen::VectorXd prompt_conditioning(const std::string& prompt, int dim) {
  if (dim < 1)
    throw ValidationError("prompt_conditioning: dim must be positive");
  RandomSource rng(fnv1a64(prompt));
  Eigen::VectorXd c(dim);
  for (int i = 0; i < dim; ++i) c[i] = rng.normal();
  return c;
}

SyntheticVelocityField::SyntheticVelocityField(int latent_dim, int cond_dim,
                                               std::uint64_t seed,
                                               double scale)
    : scale_(scale) {
  RandomSource rng(seed);
  const double std_z = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  const double std_c = 1.0 / std::sqrt(static_cast<double>(cond_dim));
  w_z_.resize(latent_dim, latent_dim);
  for (Eigen::Index i = 0; i < w_z_.rows(); ++i)
    for (Eigen::Index j = 0; j < w_z_.cols(); ++j)
      w_z_(i, j) = std_z * rng.normal();
  w_c_.resize(latent_dim, cond_dim);
  for (Eigen::Index i = 0; i < w_c_.rows(); ++i)
    for (Eigen::Index j = 0; j < w_c_.cols(); ++j)
      w_c_(i, j) = std_c * rng.normal();
}

Eigen::VectorXd SyntheticVelocityField::evaluate(
    const Eigen::VectorXd& z, double, const Eigen::VectorXd& c) const {
  if (z.size() != w_z_.cols())
    throw ValidationError("SyntheticVelocityField: latent dim mismatch");
  if (c.size() != w_c_.cols())
    throw ValidationError("SyntheticVelocityField: conditioning dim mismatch");
  return scale_ * (w_z_ * z + w_c_ * c);
}

LinearDecoder::LinearDecoder(int latent_dim, int feature_dim,
                             std::uint64_t seed) {
  RandomSource rng(seed);
  const double std = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  a_global_.resize(feature_dim, latent_dim);
  for (Eigen::Index i = 0; i < a_global_.rows(); ++i)
    for (Eigen::Index j = 0; j < a_global_.cols(); ++j)
      a_global_(i, j) = std * rng.normal();
  a_token_.resize(feature_dim, latent_dim);
  for (Eigen::Index i = 0; i < a_token_.rows(); ++i)
    for (Eigen::Index j = 0; j < a_token_.cols(); ++j)
      a_token_(i, j) = std * rng.normal();
}

FeatureBundle LinearDecoder::decode(const Eigen::VectorXd& z0) const {
  if (z0.size() != a_global_.cols())
    throw ValidationError("LinearDecoder: latent dim mismatch");
  FeatureBundle bundle;
  bundle.modality = Modality::kGenerated;
  bundle.global = (a_global_ * z0).cast<float>();
  bundle.tokens.resize(1, a_token_.rows());
  bundle.tokens.row(0) = (a_token_ * z0).cast<float>().transpose();
  return bundle;
}

DatasetManifest sample_flow_over_manifest(const DatasetManifest& manifest,
                                          const GenerationConfig& config,
                                          const std::filesystem::path& out_dir,
                                          bool overwrite) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  const int dim = manifest.embedding_dim;
  // Field and decoder are fixed models: their weights depend on stable
  // constants, not the run seed, so regenerating a manifest reuses the same
  // synthetic generator.
  const SyntheticVelocityField field(dim, dim, /*seed=*/0x67656166ULL);
  const LinearDecoder decoder(dim, dim, /*seed=*/0x67656164ULL);

  DatasetManifest updated = manifest;
  // New refs are relative to out_dir; when that differs from the manifest's
  // own directory, pre-existing relative refs must be re-anchored.
  const bool same_dir = std::filesystem::weakly_canonical(out_dir) ==
                        std::filesystem::weakly_canonical(manifest.base_dir);
  if (!same_dir) {
    auto absolutize = [&manifest](std::string& ref) {
      if (ref.rfind("inline:", 0) == 0) return;
      std::filesystem::path p(ref);
      if (p.is_relative())
        ref = std::filesystem::weakly_canonical(manifest.base_dir / p)
                  .string();
    };
    for (Sample& rec : updated.records) {
      absolutize(rec.image_feature);
      if (rec.generated_feature) absolutize(*rec.generated_feature);
    }
  }
  for (size_t i = 0; i < updated.records.size(); ++i) {
    Sample& rec = updated.records[i];
    if (rec.generated_feature && !overwrite) continue;
    const auto [positive, negative] = build_prompt(rec.text, config);
    const Eigen::VectorXd c_cond = prompt_conditioning(positive, dim);
    const Eigen::VectorXd c_uncond = prompt_conditioning(negative, dim);

    GenerationConfig per_record = config;
    per_record.seed = derive_seed(config.seed, i);
    const FeatureBundle bundle =
        sample(per_record, field, decoder, c_cond, c_uncond);

    const std::string filename = rec.sample_id + "_gen.geaf";
    write_feature_bundle(bundle, out_dir / filename);
    rec.generated_feature = filename;
  }
  updated.base_dir = out_dir;
  return updated;
}

}  // namespace gea
