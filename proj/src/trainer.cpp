// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>

#include <json.hpp>

namespace gea {

namespace {

using nlohmann::json;

// --- enum <-> string ---

const char* decay_name(TrainConfig::Decay d) {
  return d == TrainConfig::Decay::kCosine ? "cosine" : "constant";
}

TrainConfig::Decay decay_from_name(const std::string& s) {
  if (s == "cosine") return TrainConfig::Decay::kCosine;
  if (s == "constant") return TrainConfig::Decay::kConstant;
  throw ValidationError("unknown decay '" + s + "'");
}

const char* missing_generated_name(TrainConfig::MissingGenerated p) {
  return p == TrainConfig::MissingGenerated::kZeroSubstitute
             ? "zero_substitute"
             : "error";
}

TrainConfig::MissingGenerated missing_generated_from_name(
    const std::string& s) {
  if (s == "zero_substitute")
    return TrainConfig::MissingGenerated::kZeroSubstitute;
  if (s == "error") return TrainConfig::MissingGenerated::kError;
  throw ValidationError("unknown missing_generated policy '" + s + "'");
}

const char* text_tower_name(TrainConfig::TextTower t) {
  return t == TrainConfig::TextTower::kFrozen ? "frozen" : "toy";
}

TrainConfig::TextTower text_tower_from_name(const std::string& s) {
  if (s == "frozen") return TrainConfig::TextTower::kFrozen;
  if (s == "toy") return TrainConfig::TextTower::kToy;
  throw ValidationError("unknown text_tower '" + s + "'");
}

const char* positive_restriction_name(TALConfig::PositiveRestriction r) {
  return r == TALConfig::PositiveRestriction::kPositivesOnly
             ? "positives_only"
             : "all_pairs";
}

TALConfig::PositiveRestriction positive_restriction_from_name(
    const std::string& s) {
  if (s == "positives_only")
    return TALConfig::PositiveRestriction::kPositivesOnly;
  if (s == "all_pairs") return TALConfig::PositiveRestriction::kAllPairs;
  throw ValidationError("unknown positive_restriction '" + s + "'");
}

json tal_to_json(const TALConfig& c) {
  return json{{"margin", c.margin},
              {"temperature", c.temperature},
              {"positive_restriction",
               positive_restriction_name(c.positive_restriction)}};
}

TALConfig tal_from_json(const json& j) {
  TALConfig c;
  c.margin = j.value("margin", c.margin);
  c.temperature = j.value("temperature", c.temperature);
  if (j.contains("positive_restriction"))
    c.positive_restriction = positive_restriction_from_name(
        j.at("positive_restriction").get<std::string>());
  return c;
}

json encoder_to_json(const EncoderConfig& c) {
  return json{{"embed_dim", c.embed_dim},
              {"heads", c.heads},
              {"layers", c.layers},
              {"patch_size", c.patch_size},
              {"image_height", c.image_height},
              {"image_width", c.image_width},
              {"channels", c.channels},
              {"max_text_len", c.max_text_len},
              {"vocab_size", c.vocab_size}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.image_height = j.value("image_height", c.image_height);
  c.image_width = j.value("image_width", c.image_width);
  c.channels = j.value("channels", c.channels);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  return c;
}

// --- binary checkpoint IO ---

constexpr char kCheckpointMagic[4] = {'G', 'E', 'A', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_raw(std::ofstream& out, const void* p, size_t n) {
  out.write(reinterpret_cast<const char*>(p),
            static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
  write_raw(out, &v, sizeof(T));
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  write_raw(out, s.data(), s.size());
}

void write_mat(std::ofstream& out, const nn::Mat& m) {
  write_pod<std::int64_t>(out, m.rows());
  write_pod<std::int64_t>(out, m.cols());
  write_raw(out, m.data(), static_cast<size_t>(m.size()) * sizeof(double));
}

void read_raw(std::ifstream& in, void* p, size_t n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw IoError("checkpoint: truncated file");
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v;
  read_raw(in, &v, sizeof(T));
  return v;
}

std::string read_string(std::ifstream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (1ULL << 32)) throw IoError("checkpoint: absurd string length");
  std::string s(n, '\0');
  read_raw(in, s.data(), n);
  return s;
}

nn::Mat read_mat(std::ifstream& in) {
  const auto rows = read_pod<std::int64_t>(in);
  const auto cols = read_pod<std::int64_t>(in);
  if (rows < 0 || cols < 0 || rows * cols > (1LL << 32))
    throw IoError("checkpoint: absurd matrix shape");
  nn::Mat m(rows, cols);
  read_raw(in, m.data(), static_cast<size_t>(m.size()) * sizeof(double));
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("TrainConfig: batch_size < 1");
  if (epochs < 1) throw ValidationError("TrainConfig: epochs < 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw ValidationError("TrainConfig: need 0 <= warmup_epochs < epochs");
  if (lr_backbone <= 0.0 || lr_fusion <= 0.0 || warmup_start_lr <= 0.0)
    throw ValidationError("TrainConfig: learning rates must be positive");
  if (decay_floor <= 0.0 || decay_floor > 1.0)
    throw ValidationError("TrainConfig: decay_floor must be in (0, 1]");
  if (ids_per_batch < 1 || texts_per_identity < 1)
    throw ValidationError("TrainConfig: sampler shape must be positive");
  if (ids_per_batch * texts_per_identity != batch_size)
    throw ValidationError(
        "TrainConfig: ids_per_batch * texts_per_identity must equal "
        "batch_size");
  if (gif_layers < 1 || gif_heads < 1)
    throw ValidationError("TrainConfig: gif_layers/gif_heads must be >= 1");
  if (eval_omega && (*eval_omega < 0.0 || *eval_omega > 1.0))
    throw ValidationError("TrainConfig: eval_omega must be in [0, 1]");
  tal.validate();
  if (tal_fusion) tal_fusion->validate();
  mix.validate();
}

const char* ablation_name(TrainConfig::Ablation a) {
  switch (a) {
    case TrainConfig::Ablation::kBaseline: return "baseline";
    case TrainConfig::Ablation::kTgteOnly: return "tgte_only";
    case TrainConfig::Ablation::kGifOnly: return "gif_only";
    case TrainConfig::Ablation::kFull: return "full";
  }
  return "unknown";
}

TrainConfig::Ablation ablation_from_name(const std::string& name) {
  if (name == "baseline") return TrainConfig::Ablation::kBaseline;
  if (name == "tgte_only") return TrainConfig::Ablation::kTgteOnly;
  if (name == "gif_only") return TrainConfig::Ablation::kGifOnly;
  if (name == "full") return TrainConfig::Ablation::kFull;
  throw ValidationError("unknown ablation '" + name + "'");
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr_backbone"] = c.lr_backbone;
  j["lr_fusion"] = c.lr_fusion;
  j["warmup_epochs"] = c.warmup_epochs;
  j["warmup_start_lr"] = c.warmup_start_lr;
  j["tal"] = tal_to_json(c.tal);
  j["mix"] = json{{"omega_start", c.mix.omega_start},
                  {"omega_end", c.mix.omega_end},
                  {"total_epochs", c.mix.total_epochs}};
  j["ablation"] = ablation_name(c.ablation);
  j["seed"] = c.seed;
  j["decay"] = decay_name(c.decay);
  j["decay_floor"] = c.decay_floor;
  j["ids_per_batch"] = c.ids_per_batch;
  j["texts_per_identity"] = c.texts_per_identity;
  j["missing_generated"] = missing_generated_name(c.missing_generated);
  j["text_tower"] = text_tower_name(c.text_tower);
  j["gif_layers"] = c.gif_layers;
  j["gif_heads"] = c.gif_heads;
  j["tal_fusion"] = c.tal_fusion ? tal_to_json(*c.tal_fusion) : json(nullptr);
  j["eval_omega"] = c.eval_omega ? json(*c.eval_omega) : json(nullptr);
  j["eval_fused_rerank"] = c.eval_fused_rerank;
  j["encoder"] = encoder_to_json(c.encoder);
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: JSON parse error: ") +
                          e.what());
  }
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.lr_backbone = j.value("lr_backbone", c.lr_backbone);
    c.lr_fusion = j.value("lr_fusion", c.lr_fusion);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.warmup_start_lr = j.value("warmup_start_lr", c.warmup_start_lr);
    if (j.contains("tal")) c.tal = tal_from_json(j.at("tal"));
    if (j.contains("mix")) {
      const auto& m = j.at("mix");
      c.mix.omega_start = m.value("omega_start", c.mix.omega_start);
      c.mix.omega_end = m.value("omega_end", c.mix.omega_end);
      c.mix.total_epochs = m.value("total_epochs", c.mix.total_epochs);
    }
    if (j.contains("ablation"))
      c.ablation = ablation_from_name(j.at("ablation").get<std::string>());
    c.seed = j.value("seed", c.seed);
    if (j.contains("decay"))
      c.decay = decay_from_name(j.at("decay").get<std::string>());
    c.decay_floor = j.value("decay_floor", c.decay_floor);
    c.ids_per_batch = j.value("ids_per_batch", c.ids_per_batch);
    c.texts_per_identity = j.value("texts_per_identity", c.texts_per_identity);
    if (j.contains("missing_generated"))
      c.missing_generated = missing_generated_from_name(
          j.at("missing_generated").get<std::string>());
    if (j.contains("text_tower"))
      c.text_tower =
          text_tower_from_name(j.at("text_tower").get<std::string>());
    c.gif_layers = j.value("gif_layers", c.gif_layers);
    c.gif_heads = j.value("gif_heads", c.gif_heads);
    if (j.contains("tal_fusion") && !j.at("tal_fusion").is_null())
      c.tal_fusion = tal_from_json(j.at("tal_fusion"));
    if (j.contains("eval_omega") && !j.at("eval_omega").is_null())
      c.eval_omega = j.at("eval_omega").get<double>();
    c.eval_fused_rerank = j.value("eval_fused_rerank", c.eval_fused_rerank);
    if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: schema violation: ") +
                          e.what());
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return train_config_from_json(text);
}

std::string config_digest(const TrainConfig& config) {
  // dump() emits object keys sorted, so the digest is canonical.
  return to_hex(fnv1a64(json::parse(train_config_to_json(config)).dump()));
}

double lr_at(const TrainConfig& config, int epoch, ParamGroup group) {
  if (epoch < 0 || epoch >= config.epochs)
    throw ValidationError("lr_at: epoch " + std::to_string(epoch) +
                          " outside [0, " + std::to_string(config.epochs) +
                          ")");
  const double base =
      group == ParamGroup::kBackbone ? config.lr_backbone : config.lr_fusion;
  if (epoch < config.warmup_epochs) {
    const double f = static_cast<double>(epoch) / config.warmup_epochs;
    return config.warmup_start_lr + (base - config.warmup_start_lr) * f;
  }
  if (config.decay == TrainConfig::Decay::kConstant) return base;
  const int span = config.epochs - 1 - config.warmup_epochs;
  if (span <= 0) return base;
  const double phase =
      static_cast<double>(epoch - config.warmup_epochs) / span;
  const double shape = 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
  return base * (config.decay_floor + (1.0 - config.decay_floor) * shape);
}

// ---------------------------------------------------------------------------
// ModelState

ModelState ModelState::make(const TrainConfig& config, int dim) {
  config.validate();
  if (dim < 1) throw ValidationError("ModelState: dim must be positive");
  if (dim % config.gif_heads != 0)
    throw ValidationError("ModelState: dim " + std::to_string(dim) +
                          " must divide by gif_heads " +
                          std::to_string(config.gif_heads));
  ModelState m;
  m.dim = dim;
  m.config = config;
  m.image_proj = nn::Linear::identity(dim);
  m.text_proj = nn::Linear::identity(dim);
  if (config.text_tower == TrainConfig::TextTower::kToy) {
    EncoderConfig enc = config.encoder;
    enc.embed_dim = dim;
    if (dim % enc.heads != 0)
      throw ValidationError("ModelState: dim must divide by encoder heads");
    RandomSource enc_rng(derive_seed(config.seed, 1));
    m.text_encoder = TextEncoder::make(enc, enc_rng);
  }
  RandomSource gif_rng(derive_seed(config.seed, 2));
  m.gif = GifParams::make(dim, config.gif_heads, config.gif_layers, gif_rng);
  return m;
}

std::vector<nn::ParamRef> ModelState::backbone_params() {
  std::vector<nn::ParamRef> out;
  image_proj.collect("image_proj", out);
  text_proj.collect("text_proj", out);
  if (text_encoder) text_encoder->collect("text_encoder", out);
  return out;
}

std::vector<nn::ParamRef> ModelState::fusion_params() {
  std::vector<nn::ParamRef> out;
  gif.collect("gif", out);
  return out;
}

std::vector<nn::ParamRef> ModelState::all_params() {
  auto out = backbone_params();
  auto fusion = fusion_params();
  out.insert(out.end(), fusion.begin(), fusion.end());
  return out;
}

nn::Mat ModelState::project_image_rows(const nn::Mat& rows) const {
  nn::Linear::Cache scratch;
  return image_proj.forward(rows, scratch);
}

nn::Mat ModelState::project_text_rows(const nn::Mat& rows) const {
  nn::Linear::Cache scratch;
  return text_proj.forward(rows, scratch);
}

TokenSequence ModelState::encode_text(const std::string& text) const {
  if (!text_encoder)
    throw ValidationError("ModelState: no toy text tower configured");
  TextEncoder::Cache scratch;
  return text_encoder->forward(text, scratch);
}

// ---------------------------------------------------------------------------
// AdamOptimizer

void AdamOptimizer::init(const std::vector<nn::ParamRef>& params) {
  steps = 0;
  m.clear();
  v.clear();
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& p : params) {
    m.push_back(nn::Mat::Zero(p.value->rows(), p.value->cols()));
    v.push_back(nn::Mat::Zero(p.value->rows(), p.value->cols()));
  }
}

void AdamOptimizer::step(const std::vector<nn::ParamRef>& params,
                         const std::vector<double>& lrs) {
  if (params.size() != m.size() || params.size() != lrs.size())
    throw ValidationError("AdamOptimizer: parameter list changed shape");
  ++steps;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (size_t i = 0; i < params.size(); ++i) {
    const nn::Mat& g = *params[i].grad;
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
    const nn::Mat m_hat = m[i] / bc1;
    const nn::Mat v_hat = v[i] / bc2;
    *params[i].value -=
        lrs[i] * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
  }
}

// ---------------------------------------------------------------------------
// Dataset cache

TokenSequence sequence_from_bundle(const FeatureBundle& bundle) {
  TokenSequence seq;
  switch (bundle.modality) {
    case Modality::kImage: seq.kind = SequenceKind::kImage; break;
    case Modality::kText: seq.kind = SequenceKind::kText; break;
    case Modality::kGenerated: seq.kind = SequenceKind::kGenerated; break;
  }
  seq.rows.resize(1 + bundle.num_tokens(), bundle.dim());
  seq.rows.row(0) = bundle.global.cast<double>().transpose();
  for (int r = 0; r < bundle.num_tokens(); ++r)
    seq.rows.row(1 + r) = bundle.tokens.row(r).cast<double>();
  seq.eos_index = 0;  // frozen bundles store the global first
  return seq;
}

DatasetCache DatasetCache::load(const DatasetManifest& manifest,
                                TrainConfig::TextTower text_tower) {
  DatasetCache cache;
  cache.dim = manifest.embedding_dim;
  cache.samples.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    SampleTensors s;
    s.sample_id = rec.sample_id;
    s.identity = rec.identity;
    s.text = rec.text;
    s.image = sequence_from_bundle(
        load_feature_bundle(rec.image_feature, manifest.embedding_dim,
                            Modality::kImage, manifest.base_dir));
    if (rec.text_feature) {
      s.text_feature = sequence_from_bundle(
          load_feature_bundle(*rec.text_feature, manifest.embedding_dim,
                              Modality::kText, manifest.base_dir));
    } else if (text_tower == TrainConfig::TextTower::kFrozen) {
      throw ValidationError("sample '" + rec.sample_id +
                            "' has no text_feature; frozen text mode needs "
                            "precomputed text features (or use the toy "
                            "text tower)");
    }
    if (rec.generated_feature)
      s.generated = sequence_from_bundle(
          load_feature_bundle(*rec.generated_feature, manifest.embedding_dim,
                              Modality::kGenerated, manifest.base_dir));
    cache.samples.push_back(std::move(s));
  }
  return cache;
}

std::vector<std::vector<int>> make_identity_batches(const DatasetCache& data,
                                                    int ids_per_batch,
                                                    int texts_per_identity,
                                                    RandomSource& rng) {
  if (ids_per_batch < 1 || texts_per_identity < 1)
    throw ValidationError("make_identity_batches: sampler shape must be >= 1");
  std::map<std::int32_t, std::vector<int>> by_identity;
  for (size_t i = 0; i < data.samples.size(); ++i)
    by_identity[data.samples[i].identity.id].push_back(static_cast<int>(i));
  if (by_identity.size() < static_cast<size_t>(ids_per_batch))
    throw ValidationError("make_identity_batches: only " +
                          std::to_string(by_identity.size()) +
                          " identities for " + std::to_string(ids_per_batch) +
                          " per batch");

  std::vector<std::int32_t> ids;
  ids.reserve(by_identity.size());
  for (const auto& [id, members] : by_identity) ids.push_back(id);

  auto shuffle = [&rng](auto& vec) {
    for (size_t i = vec.size(); i > 1; --i) {
      const size_t j = rng.uniform_int(i);
      std::swap(vec[i - 1], vec[j]);
    }
  };
  shuffle(ids);
  for (auto& [id, members] : by_identity) shuffle(members);

  const size_t num_batches = ids.size() / static_cast<size_t>(ids_per_batch);
  std::vector<std::vector<int>> batches;
  batches.reserve(num_batches);
  for (size_t b = 0; b < num_batches; ++b) {
    std::vector<int> batch;
    batch.reserve(static_cast<size_t>(ids_per_batch) * texts_per_identity);
    for (int p = 0; p < ids_per_batch; ++p) {
      const auto& members =
          by_identity[ids[b * static_cast<size_t>(ids_per_batch) +
                          static_cast<size_t>(p)]];
      for (int q = 0; q < texts_per_identity; ++q)
        batch.push_back(members[static_cast<size_t>(q) % members.size()]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// train_step

double train_step(ModelState& model, AdamOptimizer& opt,
                  const DatasetCache& data, const std::vector<int>& batch,
                  int epoch, const TrainConfig& config) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  for (int idx : batch)
    if (idx < 0 || static_cast<size_t>(idx) >= data.samples.size())
      throw ValidationError("train_step: batch index out of range");

  const size_t K = batch.size();
  const bool toy_text = config.text_tower == TrainConfig::TextTower::kToy;
  const bool needs_generated = config.uses_mixing() || config.uses_fusion();
  const double omega =
      config.uses_mixing() ? omega_at(config.mix, epoch) : 0.0;

  auto params = model.all_params();
  nn::zero_grads(params);

  // Per-sample forward caches.
  std::vector<nn::Linear::Cache> img_cache(K), txt_cache(K), gen_cache(K);
  std::vector<TextEncoder::Cache> toy_cache(K);
  std::vector<GifBranch::Cache> gif_img_cache(K), gif_txt_cache(K);
  std::vector<nn::Mat> img_rows(K), txt_rows(K), gen_rows(K);
  std::vector<int> eos_index(K, 0);
  std::vector<bool> has_gen(K, false);
  std::vector<Eigen::VectorXd> u(K), t(K), g(K), mixed(K);
  std::vector<Eigen::VectorXd> vf(K), tf(K);
  std::vector<IdentityLabel> labels(K);

  for (size_t i = 0; i < K; ++i) {
    const SampleTensors& s = data.samples[static_cast<size_t>(batch[i])];
    labels[i] = s.identity;

    img_rows[i] = model.image_proj.forward(s.image.rows, img_cache[i]);
    u[i] = img_rows[i].row(0).transpose();

    if (toy_text) {
      const TokenSequence enc =
          model.text_encoder->forward(s.text, toy_cache[i]);
      txt_rows[i] = enc.rows;
      eos_index[i] = enc.eos_index;
    } else {
      txt_rows[i] = model.text_proj.forward(s.text_feature->rows,
                                            txt_cache[i]);
      eos_index[i] = s.text_feature->eos_index;
    }
    t[i] = txt_rows[i].row(eos_index[i]).transpose();

    if (needs_generated) {
      if (s.generated) {
        has_gen[i] = true;
        gen_rows[i] = model.image_proj.forward(s.generated->rows,
                                               gen_cache[i]);
      } else if (config.missing_generated ==
                 TrainConfig::MissingGenerated::kError) {
        throw ValidationError("train_step: sample '" + s.sample_id +
                              "' has no generated feature");
      } else {
        gen_rows[i] = nn::Mat::Zero(1, model.dim);
      }
      g[i] = gen_rows[i].row(0).transpose();
      mixed[i] = mix_tokens(t[i], g[i], omega);
    } else {
      mixed[i] = t[i];
    }

    if (config.uses_fusion()) {
      const nn::Mat fused_img = model.gif.image_branch.forward(
          img_rows[i], gen_rows[i], gif_img_cache[i]);
      vf[i] = fused_img.row(0).transpose();
      const nn::Mat fused_txt = model.gif.text_branch.forward(
          txt_rows[i], gen_rows[i], gif_txt_cache[i]);
      tf[i] = fused_txt.row(eos_index[i]).transpose();
    }
  }

  const SimilarityMatrix sim_global =
      similarity_matrix(u, mixed, labels, labels);
  const TALGradient grad_global = tal_with_grad(sim_global, config.tal);
  double loss = grad_global.loss;

  TALGradient grad_fused;
  if (config.uses_fusion()) {
    const SimilarityMatrix sim_fused =
        similarity_matrix(vf, tf, labels, labels);
    grad_fused = tal_with_grad(sim_fused, config.fusion_tal());
    loss += grad_fused.loss;
  }

  // Backward.
  std::vector<Eigen::VectorXd> d_u(K), d_mixed(K), d_vf(K), d_tf(K);
  for (size_t i = 0; i < K; ++i) {
    d_u[i] = Eigen::VectorXd::Zero(model.dim);
    d_mixed[i] = Eigen::VectorXd::Zero(model.dim);
  }
  similarity_matrix_backward(u, mixed, grad_global.d_scores, d_u, d_mixed);
  if (config.uses_fusion()) {
    for (size_t i = 0; i < K; ++i) {
      d_vf[i] = Eigen::VectorXd::Zero(model.dim);
      d_tf[i] = Eigen::VectorXd::Zero(model.dim);
    }
    similarity_matrix_backward(vf, tf, grad_fused.d_scores, d_vf, d_tf);
  }

  for (size_t i = 0; i < K; ++i) {
    nn::Mat g_img = nn::Mat::Zero(img_rows[i].rows(), model.dim);
    nn::Mat g_txt = nn::Mat::Zero(txt_rows[i].rows(), model.dim);
    nn::Mat g_gen;
    if (needs_generated) g_gen = nn::Mat::Zero(gen_rows[i].rows(), model.dim);

    g_img.row(0) += d_u[i].transpose();
    if (needs_generated) {
      // mixed = (1 - omega) t + omega g
      g_txt.row(eos_index[i]) += (1.0 - omega) * d_mixed[i].transpose();
      g_gen.row(0) += omega * d_mixed[i].transpose();
    } else {
      g_txt.row(eos_index[i]) += d_mixed[i].transpose();
    }

    if (config.uses_fusion()) {
      nn::Mat g_fused_img = nn::Mat::Zero(img_rows[i].rows(), model.dim);
      g_fused_img.row(0) = d_vf[i].transpose();
      auto [gq_img, gkv_img] =
          model.gif.image_branch.backward(g_fused_img, gif_img_cache[i]);
      g_img += gq_img;
      if (has_gen[i]) g_gen += gkv_img;

      nn::Mat g_fused_txt = nn::Mat::Zero(txt_rows[i].rows(), model.dim);
      g_fused_txt.row(eos_index[i]) = d_tf[i].transpose();
      auto [gq_txt, gkv_txt] =
          model.gif.text_branch.backward(g_fused_txt, gif_txt_cache[i]);
      g_txt += gq_txt;
      if (has_gen[i]) g_gen += gkv_txt;
    }

    model.image_proj.backward(g_img, img_cache[i]);
    if (has_gen[i]) model.image_proj.backward(g_gen, gen_cache[i]);
    if (toy_text)
      model.text_encoder->backward(g_txt, toy_cache[i]);
    else
      model.text_proj.backward(g_txt, txt_cache[i]);
  }

  // Per-group learning rates, one Adam step.
  const size_t n_backbone = model.backbone_params().size();
  std::vector<double> lrs(params.size());
  const double lr_b = lr_at(config, epoch, ParamGroup::kBackbone);
  const double lr_f = lr_at(config, epoch, ParamGroup::kFusion);
  for (size_t i = 0; i < params.size(); ++i)
    lrs[i] = i < n_backbone ? lr_b : lr_f;
  opt.step(params, lrs);

  if (!std::isfinite(loss)) throw NumericError("train_step: non-finite loss");
  return loss;
}

// ---------------------------------------------------------------------------
// evaluate_with_model

RetrievalReport evaluate_with_model(const DatasetManifest& manifest,
                                    const ModelState& model, double omega,
                                    bool use_fused_rerank) {
  if (omega < 0.0 || omega > 1.0)
    throw ValidationError("evaluate: omega must be in [0, 1]");
  const DatasetCache data =
      DatasetCache::load(manifest, model.config.text_tower);
  const size_t n = data.samples.size();
  if (n == 0) throw ValidationError("evaluate: empty gallery/query set");
  if (data.dim != model.dim)
    throw ValidationError("evaluate: manifest dim " +
                          std::to_string(data.dim) + " != model dim " +
                          std::to_string(model.dim));

  const bool toy_text =
      model.config.text_tower == TrainConfig::TextTower::kToy;

  std::vector<nn::Mat> gallery_rows(n), query_rows(n), gen_rows(n);
  std::vector<int> eos_index(n, 0);
  std::vector<bool> has_gen(n, false);
  std::vector<Eigen::VectorXd> gallery(n), mixed(n);

  for (size_t i = 0; i < n; ++i) {
    const SampleTensors& s = data.samples[i];
    gallery_rows[i] = model.project_image_rows(s.image.rows);
    gallery[i] = gallery_rows[i].row(0).transpose();

    if (toy_text) {
      const TokenSequence enc = model.encode_text(s.text);
      query_rows[i] = enc.rows;
      eos_index[i] = enc.eos_index;
    } else {
      query_rows[i] = model.project_text_rows(s.text_feature->rows);
      eos_index[i] = s.text_feature->eos_index;
    }
    const Eigen::VectorXd t_global =
        query_rows[i].row(eos_index[i]).transpose();

    if (s.generated) {
      has_gen[i] = true;
      gen_rows[i] = model.project_image_rows(s.generated->rows);
      const Eigen::VectorXd g_global = gen_rows[i].row(0).transpose();
      mixed[i] = mix_tokens(t_global, g_global, omega);
    } else {
      // No generated feature: fall back to omega = 0 for this query.
      mixed[i] = t_global;
    }
  }

  std::vector<Eigen::VectorXd> scores(n);
  std::vector<std::vector<bool>> relevance(n);
  for (size_t q = 0; q < n; ++q) {
    scores[q].resize(static_cast<Eigen::Index>(n));
    relevance[q].resize(n);
    for (size_t i = 0; i < n; ++i) {
      scores[q][static_cast<Eigen::Index>(i)] =
          cosine_similarity(gallery[i], mixed[q]);
      relevance[q][i] = data.samples[i].identity == data.samples[q].identity;
    }
  }

  if (use_fused_rerank) {
    for (size_t q = 0; q < n; ++q) {
      if (!has_gen[q]) continue;
      GifBranch::Cache scratch_txt;
      const nn::Mat fused_txt = model.gif.text_branch.forward(
          query_rows[q], gen_rows[q], scratch_txt);
      const Eigen::VectorXd tf = fused_txt.row(eos_index[q]).transpose();
      for (size_t i = 0; i < n; ++i) {
        GifBranch::Cache scratch_img;
        const nn::Mat fused_img = model.gif.image_branch.forward(
            gallery_rows[i], gen_rows[q], scratch_img);
        const Eigen::VectorXd vf = fused_img.row(0).transpose();
        scores[q][static_cast<Eigen::Index>(i)] += cosine_similarity(vf, tf);
      }
    }
  }

  return make_report(scores, relevance, config_digest(model.config));
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path,
                     const ModelState& model, const AdamOptimizer& opt,
                     int epochs_completed, const RandomSource& rng,
                     double best_map, int best_epoch) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");

  write_raw(out, kCheckpointMagic, 4);
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::int32_t>(out, epochs_completed);
  write_pod<std::int32_t>(out, model.dim);
  write_pod<std::int32_t>(out, best_epoch);
  write_pod<double>(out, best_map);
  write_string(out, train_config_to_json(model.config));
  write_string(out, rng.serialize());
  write_pod<std::int64_t>(out, opt.steps);

  auto params = const_cast<ModelState&>(model).all_params();
  if (params.size() != opt.m.size())
    throw ValidationError("save_checkpoint: optimizer not initialized for "
                          "this model");
  write_pod<std::uint64_t>(out, params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    write_string(out, params[i].name);
    write_mat(out, *params[i].value);
    write_mat(out, opt.m[i]);
    write_mat(out, opt.v[i]);
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");

  char magic[4];
  read_raw(in, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint '" + path.string() + "': bad magic");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " +
                  std::to_string(version));

  LoadedCheckpoint loaded;
  loaded.epochs_completed = read_pod<std::int32_t>(in);
  const int dim = read_pod<std::int32_t>(in);
  loaded.best_epoch = read_pod<std::int32_t>(in);
  loaded.best_map = read_pod<double>(in);
  const TrainConfig config = train_config_from_json(read_string(in));
  loaded.rng = RandomSource::deserialize(read_string(in));
  const auto adam_steps = read_pod<std::int64_t>(in);

  loaded.model = ModelState::make(config, dim);
  auto params = loaded.model.all_params();
  loaded.opt.init(params);
  loaded.opt.steps = adam_steps;

  const auto n = read_pod<std::uint64_t>(in);
  if (n != params.size())
    throw IoError("checkpoint: parameter count mismatch (file " +
                  std::to_string(n) + ", model " +
                  std::to_string(params.size()) + ")");
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string name = read_string(in);
    if (name != params[i].name)
      throw IoError("checkpoint: parameter '" + name + "' where '" +
                    params[i].name + "' expected");
    const nn::Mat value = read_mat(in);
    const nn::Mat m = read_mat(in);
    const nn::Mat v = read_mat(in);
    if (value.rows() != params[i].value->rows() ||
        value.cols() != params[i].value->cols())
      throw IoError("checkpoint: shape mismatch for '" + name + "'");
    *params[i].value = value;
    loaded.opt.m[i] = m;
    loaded.opt.v[i] = v;
  }
  return loaded;
}

// ---------------------------------------------------------------------------
// fit

namespace {

void write_history_json(const std::vector<EpochStats>& history,
                        const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& e : history) {
    arr.push_back(json{{"epoch", e.epoch},
                       {"mean_loss", e.mean_loss},
                       {"val_rank1", e.val_rank1},
                       {"val_rank5", e.val_rank5},
                       {"val_rank10", e.val_rank10},
                       {"val_map", e.val_map},
                       {"lr_backbone", e.lr_backbone},
                       {"lr_fusion", e.lr_fusion},
                       {"omega", e.omega}});
  }
  json doc;
  doc["schema_version"] = 1;
  doc["epochs"] = arr;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << "\n";
}

}  // namespace

FitResult fit(const DatasetManifest& train_manifest,
              const DatasetManifest& val_manifest, const TrainConfig& config,
              const std::filesystem::path& out_dir,
              const std::optional<std::filesystem::path>& resume,
              const std::optional<int>& stop_after) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  const DatasetCache train_data =
      DatasetCache::load(train_manifest, config.text_tower);
  if (train_data.samples.empty())
    throw ValidationError("fit: empty training manifest");

  ModelState model;
  AdamOptimizer opt;
  RandomSource rng(0);
  int start_epoch = 0;
  FitResult result;

  if (resume) {
    LoadedCheckpoint loaded = load_checkpoint(*resume);
    if (config_digest(loaded.model.config) != config_digest(config))
      throw ValidationError(
          "fit: resume checkpoint was trained with a different config");
    model = std::move(loaded.model);
    opt = std::move(loaded.opt);
    rng = loaded.rng;
    start_epoch = loaded.epochs_completed;
    result.best_map = loaded.best_map;
    result.best_epoch = loaded.best_epoch;
  } else {
    model = ModelState::make(config, train_manifest.embedding_dim);
    opt.init(model.all_params());
    rng = RandomSource(derive_seed(config.seed, 0));
  }

  // Stamp the run directory with the exact config used.
  {
    json doc = json::parse(train_config_to_json(config));
    doc["config_digest"] = config_digest(config);
    std::ofstream out(out_dir / "config_used.json", std::ios::trunc);
    if (!out) throw IoError("cannot write config_used.json");
    out << doc.dump(2) << "\n";
  }

  const std::filesystem::path best_path = out_dir / "best.geac";
  const std::filesystem::path last_path = out_dir / "last.geac";
  const double eval_omega = config.resolve_eval_omega();

  int end_epoch = config.epochs;
  if (stop_after) {
    if (*stop_after < 1) throw ValidationError("fit: stop_after must be >= 1");
    end_epoch = std::min(end_epoch, start_epoch + *stop_after);
  }

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const auto batches = make_identity_batches(
        train_data, config.ids_per_batch, config.texts_per_identity, rng);
    if (batches.empty())
      throw ValidationError("fit: no full batch available; reduce "
                            "ids_per_batch");
    double loss_sum = 0.0;
    for (const auto& batch : batches)
      loss_sum += train_step(model, opt, train_data, batch, epoch, config);

    const RetrievalReport report = evaluate_with_model(
        val_manifest, model, eval_omega, config.eval_fused_rerank);

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(batches.size());
    stats.val_rank1 = report.rank1;
    stats.val_rank5 = report.rank5;
    stats.val_rank10 = report.rank10;
    stats.val_map = report.map;
    stats.lr_backbone = lr_at(config, epoch, ParamGroup::kBackbone);
    stats.lr_fusion = lr_at(config, epoch, ParamGroup::kFusion);
    stats.omega = config.uses_mixing() ? omega_at(config.mix, epoch) : 0.0;
    result.history.push_back(stats);

    if (report.map > result.best_map) {
      result.best_map = report.map;
      result.best_epoch = epoch;
      save_checkpoint(best_path, model, opt, epoch + 1, rng, result.best_map,
                      result.best_epoch);
    }
    save_checkpoint(last_path, model, opt, epoch + 1, rng, result.best_map,
                    result.best_epoch);
    write_history_json(result.history, out_dir / "history.json");
  }

  result.best_checkpoint = best_path;
  result.last_checkpoint = last_path;
  return result;
}

}  // namespace gea
