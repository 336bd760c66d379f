// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/fixture.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>

namespace gea {

namespace {

Eigen::VectorXd gaussian_vector(int dim, RandomSource& rng) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return v;
}

// Unit noise direction with span_frac of its amplitude inside the anchor
// span. anchors has orthonormal rows.
Eigen::VectorXd structured_unit_noise(const Eigen::MatrixXd& anchors,
                                      double span_frac, RandomSource& rng) {
  const int dim = static_cast<int>(anchors.cols());
  const Eigen::VectorXd raw = gaussian_vector(dim, rng);
  const Eigen::VectorXd in_span = anchors.transpose() * (anchors * raw);
  const Eigen::VectorXd off_span = raw - in_span;
  const double n_in = in_span.norm();
  const double n_off = off_span.norm();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
  if (n_in > 0.0) out += span_frac * in_span / n_in;
  if (n_off > 0.0)
    out += std::sqrt(std::max(0.0, 1.0 - span_frac * span_frac)) *
           off_span / n_off;
  return out;
}

FeatureBundle bundle_from(const Eigen::VectorXd& global,
                          const std::vector<Eigen::VectorXd>& tokens,
                          Modality modality) {
  FeatureBundle b;
  b.modality = modality;
  b.global = global.cast<float>();
  b.tokens.resize(static_cast<Eigen::Index>(tokens.size()), global.size());
  for (size_t r = 0; r < tokens.size(); ++r)
    b.tokens.row(static_cast<Eigen::Index>(r)) =
        tokens[r].cast<float>().transpose();
  return b;
}

}  // namespace

void FixtureConfig::validate() const {
  if (num_identities < 1 || texts_per_identity < 1 || dim < 1)
    throw ValidationError("FixtureConfig: counts and dim must be positive");
  if (noise < 0.0) throw ValidationError("FixtureConfig: noise must be >= 0");
  if (tokens_per_bundle < 0)
    throw ValidationError("FixtureConfig: tokens_per_bundle must be >= 0");
  if (span_noise_fraction < 0.0 || span_noise_fraction > 1.0)
    throw ValidationError(
        "FixtureConfig: span_noise_fraction must be in [0, 1]");
  if (generated_text_corr < 0.0 || generated_fresh_noise < 0.0)
    throw ValidationError("FixtureConfig: generated mix must be >= 0");
}

FixtureResult make_fixture(const FixtureConfig& config,
                           const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir / "features");

  RandomSource rng(config.seed);

  // Anchor matrix: num_identities x dim, rows orthonormalized by
  // Gram-Schmidt when the dimension allows, plain unit vectors otherwise.
  Eigen::MatrixXd anchors(config.num_identities, config.dim);
  for (int k = 0; k < config.num_identities; ++k) {
    Eigen::VectorXd a = gaussian_vector(config.dim, rng);
    if (config.dim >= config.num_identities)
      for (int prev = 0; prev < k; ++prev)
        a -= anchors.row(prev).dot(a) * anchors.row(prev).transpose();
    const double norm = a.norm();
    if (norm < 1e-12)
      throw NumericError("make_fixture: degenerate anchor draw");
    anchors.row(k) = a.transpose() / norm;
  }

  DatasetManifest manifest;
  manifest.embedding_dim = config.dim;
  manifest.split = Split::kTrain;
  manifest.base_dir = out_dir;

  auto noise_vec = [&]() {
    return structured_unit_noise(anchors, config.span_noise_fraction, rng);
  };

  char name_buf[64];
  for (int k = 0; k < config.num_identities; ++k) {
    const Eigen::VectorXd anchor = anchors.row(k).transpose();
    for (int j = 0; j < config.texts_per_identity; ++j) {
      std::snprintf(name_buf, sizeof(name_buf), "p%03d_t%02d", k, j);
      const std::string sample_id(name_buf);

      const Eigen::VectorXd xi_img = noise_vec();
      const Eigen::VectorXd xi_txt = noise_vec();
      const Eigen::VectorXd xi_gen_fresh = noise_vec();

      const Eigen::VectorXd img_global = anchor + config.noise * xi_img;
      const Eigen::VectorXd txt_global = anchor + config.noise * xi_txt;
      const Eigen::VectorXd gen_global =
          anchor + config.generated_text_corr * config.noise * xi_txt +
          config.generated_fresh_noise * config.noise * xi_gen_fresh;

      auto make_tokens = [&]() {
        std::vector<Eigen::VectorXd> tokens;
        tokens.reserve(static_cast<size_t>(config.tokens_per_bundle));
        for (int r = 0; r < config.tokens_per_bundle; ++r)
          tokens.push_back(anchor + config.noise * noise_vec());
        return tokens;
      };

      const std::string img_file = "features/" + sample_id + "_img.geaf";
      const std::string txt_file = "features/" + sample_id + "_txt.geaf";
      const std::string gen_file = "features/" + sample_id + "_gen.geaf";
      write_feature_bundle(
          bundle_from(img_global, make_tokens(), Modality::kImage),
          out_dir / img_file);
      write_feature_bundle(
          bundle_from(txt_global, make_tokens(), Modality::kText),
          out_dir / txt_file);
      write_feature_bundle(
          bundle_from(gen_global, make_tokens(), Modality::kGenerated),
          out_dir / gen_file);

      Sample rec;
      rec.sample_id = sample_id;
      rec.identity.id = k;
      rec.text = "person id" + std::to_string(k) + " variant " +
                 std::to_string(j);
      rec.image_feature = img_file;
      rec.text_feature = txt_file;
      rec.generated_feature = gen_file;
      manifest.records.push_back(std::move(rec));
    }
  }

  FixtureResult result;
  result.train = manifest;
  result.val = manifest;
  result.val.split = Split::kVal;
  result.train_manifest_path = out_dir / "train.json";
  result.val_manifest_path = out_dir / "val.json";
  write_manifest(result.train, result.train_manifest_path);
  write_manifest(result.val, result.val_manifest_path);
  return result;
}

}  // namespace gea
