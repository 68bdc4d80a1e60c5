#include "afford3d/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "afford3d/error.hpp"
#include "afford3d/hash.hpp"
#include "afford3d/kdtree.hpp"

namespace afford3d::model {

namespace {
constexpr double kCoincident2 = 1e-24;  // (1e-12)^2
constexpr double kInterpDelta = 1e-8;
}  // namespace

bool supported_frame_count(std::size_t frames) {
  return frames == 2 || frames == 4 || frames == 8 || frames == 16;
}

void ModelConfig::validate() const {
  if (width == 0 || video_width == 0 || action_width == 0) fail(ErrorKind::Config, "model widths must be positive");
  if (tokens == 0) fail(ErrorKind::Config, "token count must be positive");
  if (patch_k == 0) fail(ErrorKind::Config, "patch size must be positive");
  if (!supported_frame_count(frames)) {
    fail(ErrorKind::Config, "frame count must be one of 2, 4, 8, 16 (got " + std::to_string(frames) + ")");
  }
  if (!(embedding_noise >= 0.0)) fail(ErrorKind::Config, "embedding noise must be >= 0");
}

// ------------------------------------------------------------ embeddings

std::uint64_t synthetic_seed(const std::string& video_id, const std::string& affordance, std::size_t frames) {
  return fnv1a(video_id + "\x1f" + affordance + "\x1f" + std::to_string(frames));
}

namespace {

// Prototype (shared by every video of an affordance) plus per-video noise.
std::vector<double> synthetic_embedding(const EmbeddingSource& source, std::size_t frames, std::size_t count,
                                        const char* stream, double noise) {
  std::mt19937_64 proto_rng(fnv1a(std::string(stream) + "\x1f" + source.affordance + "\x1f" + std::to_string(frames)));
  std::mt19937_64 noise_rng(synthetic_seed(source.video_id, source.affordance, frames) ^ fnv1a(stream));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values(count);
  for (auto& v : values) v = normal(proto_rng);
  for (auto& v : values) v += noise * normal(noise_rng);
  return values;
}

TensorArchive load_embedding_file(const EmbeddingSource& source) {
  return read_archive(*source.file);
}

}  // namespace

VideoTokens encode_video_stub(const EmbeddingSource& source, const ModelConfig& config) {
  const std::size_t f = config.frames;
  if (!supported_frame_count(f)) fail(ErrorKind::Parameter, "unsupported frame count " + std::to_string(f));
  if (source.file) {
    const TensorArchive archive = load_embedding_file(source);
    const ad::Tensor* t = archive.find("video");
    if (!t) fail(ErrorKind::Format, source.file->string() + ": no 'video' tensor");
    if (t->rank() != 2 || t->shape()[0] != f || t->shape()[1] != config.video_width) {
      fail(ErrorKind::Format, source.file->string() + ": video tensor is " + t->shape_string() + ", expected [" +
                                  std::to_string(f) + "x" + std::to_string(config.video_width) + "]");
    }
    return {*t};
  }
  return {ad::Tensor({f, config.video_width},
                     synthetic_embedding(source, f, f * config.video_width, "video", config.embedding_noise))};
}

ActionTokens encode_action_stub(const EmbeddingSource& source, const ModelConfig& config) {
  const std::size_t f = config.frames;
  if (!supported_frame_count(f)) fail(ErrorKind::Parameter, "unsupported frame count " + std::to_string(f));
  if (source.file) {
    const TensorArchive archive = load_embedding_file(source);
    const ad::Tensor* t = archive.find("action");
    if (!t) fail(ErrorKind::Format, source.file->string() + ": no 'action' tensor");
    if (t->rank() != 3 || t->shape()[1] != 2) {
      fail(ErrorKind::Format, source.file->string() + ": action tensor must be F x 2 x D_a, got " + t->shape_string());
    }
    if (t->shape()[0] != f || t->shape()[2] != config.action_width) {
      fail(ErrorKind::Format, source.file->string() + ": action tensor is " + t->shape_string() + ", expected [" +
                                  std::to_string(f) + "x2x" + std::to_string(config.action_width) + "]");
    }
    return {*t};
  }
  return {ad::Tensor({f, 2, config.action_width},
                     synthetic_embedding(source, f, f * 2 * config.action_width, "action", config.embedding_noise))};
}

void save_embeddings(const std::filesystem::path& path, const VideoTokens& video, const ActionTokens& action) {
  TensorArchive archive;
  archive.tensors.push_back({"video", video.frames});
  archive.tensors.push_back({"action", action.tokens});
  write_archive(path, archive);
}

// ------------------------------------------------------------ parameters

std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_layout(const ModelConfig& c) {
  const std::size_t d = c.width;
  return {
      {"patch.w1", {c.patch_input(), d}},
      {"patch.b1", {1, d}},
      {"patch.w2", {d, d}},
      {"patch.b2", {1, d}},
      {"fuse.query", {1, d}},
      {"fuse.video_key", {c.video_width, d}},
      {"fuse.video_value", {c.video_width, d}},
      {"fuse.action_key", {c.action_width, d}},
      {"fuse.action_value", {c.action_width, d}},
      {"fuse.proj", {d, d}},
      {"fuse.proj_bias", {1, d}},
      {"decoder.wq", {d, d}},
      {"decoder.wk", {d, d}},
      {"decoder.wv", {d, d}},
      {"head.w1", {d, d}},
      {"head.b1", {1, d}},
      {"head.w2", {d, d}},
      {"head.b2", {1, d}},
  };
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams params;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& [name, shape] : parameter_layout(config)) {
    ad::Tensor t(shape);
    const bool bias = shape[0] == 1 && name != "fuse.query";
    if (!bias) {
      // Glorot-normal; the query is a single row, scaled like a weight column.
      const double fan_in = static_cast<double>(shape[0]);
      const double fan_out = static_cast<double>(shape[1]);
      const double stddev = std::sqrt(2.0 / (fan_in + fan_out));
      for (double& v : t.storage()) v = stddev * normal(rng);
    }
    params.tensors_.push_back({name, std::move(t)});
  }
  return params;
}

ModelParams ModelParams::from_archive(const TensorArchive& archive, const ModelConfig& config) {
  ModelParams params;
  for (const auto& [name, shape] : parameter_layout(config)) {
    const ad::Tensor* t = archive.find(name);
    if (!t) fail(ErrorKind::Format, "checkpoint is missing tensor '" + name + "'");
    params.tensors_.push_back({name, *t});
  }
  params.validate(config);
  return params;
}

TensorArchive ModelParams::to_archive(std::optional<std::uint64_t> config_hash) const {
  return TensorArchive{tensors_, config_hash};
}

std::size_t ModelParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  fail(ErrorKind::InvalidInput, "unknown parameter '" + name + "'");
}

const ad::Tensor& ModelParams::get(const std::string& name) const { return tensors_[index_of(name)].tensor; }
ad::Tensor& ModelParams::get(const std::string& name) { return tensors_[index_of(name)].tensor; }

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.tensor.numel();
  return n;
}

void ModelParams::validate(const ModelConfig& config) const {
  const auto layout = parameter_layout(config);
  if (layout.size() != tensors_.size()) fail(ErrorKind::Shape, "parameter count does not match the model layout");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (tensors_[i].name != layout[i].first || tensors_[i].tensor.shape() != layout[i].second) {
      fail(ErrorKind::Shape, "parameter '" + tensors_[i].name + "' has shape " + tensors_[i].tensor.shape_string() +
                                 ", config expects '" + layout[i].first + "'");
    }
  }
}

// -------------------------------------------------------------- geometry

namespace {

ad::Tensor build_patches(const PointCloud& cloud, std::span<const std::size_t> centers, std::size_t patch_k) {
  const SpatialIndex index(cloud.coords);
  const std::size_t width = 3 * patch_k + 3;
  ad::Tensor patches({centers.size(), width});
  for (std::size_t t = 0; t < centers.size(); ++t) {
    const Vec3& c = cloud.coords[centers[t]];
    const NeighborList nb = index.knn(c, patch_k);
    double* row = patches.values().data() + t * width;
    for (std::size_t j = 0; j < patch_k; ++j) {
      const Vec3& p = cloud.coords[nb.indices[j]];
      for (std::size_t a = 0; a < 3; ++a) row[3 * j + a] = p[a] - c[a];
    }
    for (std::size_t a = 0; a < 3; ++a) row[3 * patch_k + a] = c[a];
  }
  return patches;
}

void check_token_params(std::size_t n, std::size_t tokens, std::size_t patch_k) {
  if (tokens < 1 || tokens > n) {
    fail(ErrorKind::Parameter, "token count must be in [1, N] (M=" + std::to_string(tokens) + ", N=" + std::to_string(n) + ")");
  }
  if (patch_k < 1 || patch_k > n) {
    fail(ErrorKind::Parameter, "patch size must be in [1, N] (k=" + std::to_string(patch_k) + ", N=" + std::to_string(n) + ")");
  }
}

}  // namespace

ad::Tensor interpolation_matrix(std::span<const Vec3> centers, std::span<const Vec3> dense_coords) {
  if (centers.empty()) fail(ErrorKind::Parameter, "propagation needs at least one token");
  const std::size_t m = centers.size();
  const SpatialIndex index(centers);
  const std::size_t k = std::min<std::size_t>(3, m);
  ad::Tensor w({dense_coords.size(), m});
  for (std::size_t i = 0; i < dense_coords.size(); ++i) {
    const NeighborList nb = index.knn(dense_coords[i], k);
    if (nb.sq_dists[0] <= kCoincident2) {
      w.at(i, nb.indices[0]) = 1.0;
      continue;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += 1.0 / (nb.sq_dists[j] + kInterpDelta);
    for (std::size_t j = 0; j < k; ++j) w.at(i, nb.indices[j]) = (1.0 / (nb.sq_dists[j] + kInterpDelta)) / total;
  }
  return w;
}

PointGeometry prepare_geometry(const PointCloud& raw, const ModelConfig& config, std::uint64_t seed) {
  PointGeometry g;
  g.cloud = normalize_cloud(raw);
  check_token_params(g.cloud.size(), config.tokens, config.patch_k);
  g.centers = farthest_point_sample_canonical(g.cloud.coords, config.tokens, seed);
  g.patches = build_patches(g.cloud, g.centers, config.patch_k);
  std::vector<Vec3> centers;
  for (std::size_t c : g.centers) centers.push_back(g.cloud.coords[c]);
  g.interpolation = interpolation_matrix(centers, g.cloud.coords);
  return g;
}

// ------------------------------------------------------- tape components

BoundParams::BoundParams(ad::Tape& tape, const ModelParams& params, bool requires_grad) {
  for (const auto& t : params.tensors()) {
    index_.emplace(t.name, vars_.size());
    vars_.push_back(tape.leaf(t.tensor, requires_grad));
  }
}

ad::Var BoundParams::operator[](const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::InvalidInput, "unbound parameter '" + name + "'");
  return vars_[it->second];
}

namespace {

ad::Var affine(ad::Tape& tape, ad::Var x, ad::Var w, ad::Var b) {
  const std::size_t rows = tape.value(x).rows();
  return ad::add(tape, ad::matmul(tape, x, w), ad::repeat_rows(tape, b, rows));
}

double inv_sqrt_width(const ad::Tape& tape, ad::Var x) {
  return 1.0 / std::sqrt(static_cast<double>(tape.value(x).cols()));
}

}  // namespace

ad::Var encode_tokens(ad::Tape& tape, const BoundParams& p, const ad::Tensor& patches) {
  const ad::Var x = tape.constant(patches);
  const ad::Var h = ad::relu(tape, affine(tape, x, p["patch.w1"], p["patch.b1"]));
  return affine(tape, h, p["patch.w2"], p["patch.b2"]);
}

ad::Var fuse_query(ad::Tape& tape, const BoundParams& p, const ad::Tensor& video, const ad::Tensor& action) {
  if (video.rank() != 2 || action.rank() != 3 || action.shape()[1] != 2) {
    fail(ErrorKind::Shape, "fuse: expected F x D_v video and F x 2 x D_a action, got " + video.shape_string() +
                               " and " + action.shape_string());
  }
  std::vector<ad::Var> keys, values;
  if (video.rows() > 0) {
    const ad::Var v = tape.constant(video);
    keys.push_back(ad::matmul(tape, v, p["fuse.video_key"]));
    values.push_back(ad::matmul(tape, v, p["fuse.video_value"]));
  }
  if (action.numel() > 0) {
    const ad::Var a = tape.constant(ad::Tensor({action.shape()[0] * 2, action.shape()[2]},
                                               std::vector<double>(action.values().begin(), action.values().end())));
    keys.push_back(ad::matmul(tape, a, p["fuse.action_key"]));
    values.push_back(ad::matmul(tape, a, p["fuse.action_value"]));
  }
  if (keys.empty()) fail(ErrorKind::Shape, "fuse: empty token sequence");
  const ad::Var k = ad::concat_rows(tape, keys);
  const ad::Var v = ad::concat_rows(tape, values);
  const ad::Var q = p["fuse.query"];
  const ad::Var scores = ad::scale(tape, ad::matmul(tape, q, ad::transpose(tape, k)), inv_sqrt_width(tape, q));
  const ad::Var pooled = ad::matmul(tape, ad::softmax_rows(tape, scores), v);
  return affine(tape, pooled, p["fuse.proj"], p["fuse.proj_bias"]);
}

ad::Var decode_logits(ad::Tape& tape, const BoundParams& p, ad::Var aff, ad::Var dense) {
  const ad::Var q = ad::matmul(tape, aff, p["decoder.wq"]);
  const ad::Var k = ad::matmul(tape, dense, p["decoder.wk"]);
  const ad::Var v = ad::matmul(tape, dense, p["decoder.wv"]);
  const double norm = inv_sqrt_width(tape, q);
  const ad::Var attn = ad::softmax_rows(tape, ad::scale(tape, ad::matmul(tape, q, ad::transpose(tape, k)), norm));
  const ad::Var fused = ad::matmul(tape, attn, v);
  const ad::Var h = ad::relu(tape, affine(tape, fused, p["head.w1"], p["head.b1"]));
  const ad::Var mask_query = affine(tape, h, p["head.w2"], p["head.b2"]);
  // One logit per point: its dense feature against the decoded mask query.
  return ad::scale(tape, ad::matmul(tape, dense, ad::transpose(tape, mask_query)), norm);
}

PreparedSample prepare_sample(const Sample& sample, const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  PreparedSample out;
  out.geometry = prepare_geometry(sample.cloud, config, seed);
  out.video = encode_video_stub(sample.embeddings, config);
  out.action = encode_action_stub(sample.embeddings, config);
  out.affordance = sample.embeddings.affordance;
  return out;
}

ad::Var forward_probabilities(ad::Tape& tape, const BoundParams& p, const PreparedSample& sample) {
  const ad::Var tokens = encode_tokens(tape, p, sample.geometry.patches);
  const ad::Var dense = ad::matmul(tape, tape.constant(sample.geometry.interpolation), tokens);
  const ad::Var aff = fuse_query(tape, p, sample.video.frames, sample.action.tokens);
  return ad::sigmoid(tape, decode_logits(tape, p, aff, dense));
}

std::vector<double> predict(const PreparedSample& sample, const ModelParams& params) {
  ad::Tape tape;
  const BoundParams p(tape, params, false);
  const ad::Var probs = forward_probabilities(tape, p, sample);
  const auto values = tape.value(probs).values();
  return {values.begin(), values.end()};
}

std::vector<double> forward(const Sample& sample, const ModelParams& params, const ModelConfig& config,
                            std::uint64_t seed) {
  params.validate(config);
  return predict(prepare_sample(sample, config, seed), params);
}

// ------------------------------------------------- standalone operations

TokenFeatures encode_points_stub(const PointCloud& cloud, const ModelParams& params, std::size_t tokens,
                                 std::size_t patch_k, std::uint64_t seed) {
  const PointCloud normalized = normalize_cloud(cloud);
  check_token_params(normalized.size(), tokens, patch_k);
  TokenFeatures out;
  out.center_indices = farthest_point_sample_canonical(normalized.coords, tokens, seed);
  for (std::size_t c : out.center_indices) out.centers.push_back(normalized.coords[c]);
  const ad::Tensor patches = build_patches(normalized, out.center_indices, patch_k);
  if (params.get("patch.w1").rows() != patches.cols()) {
    fail(ErrorKind::Shape, "patch encoder expects " + std::to_string(params.get("patch.w1").rows()) +
                               " inputs, patches have " + std::to_string(patches.cols()));
  }
  ad::Tape tape;
  const BoundParams p(tape, params, false);
  out.features = tape.value(encode_tokens(tape, p, patches));
  return out;
}

DensePointFeatures propagate_features(const TokenFeatures& tokens, std::span<const Vec3> dense_coords) {
  if (tokens.centers.empty()) fail(ErrorKind::Parameter, "propagation needs at least one token");
  if (tokens.features.rank() != 2 || tokens.features.rows() != tokens.centers.size()) {
    fail(ErrorKind::Shape, "token features do not match token centers");
  }
  const ad::Tensor w = interpolation_matrix(tokens.centers, dense_coords);
  ad::Tape tape;
  return {tape.value(ad::matmul(tape, tape.constant(w), tape.constant(tokens.features)))};
}

AffQuery fuse_aff_query(const VideoTokens& video, const ActionTokens& action, const ModelParams& params) {
  ad::Tape tape;
  const BoundParams p(tape, params, false);
  return {tape.value(fuse_query(tape, p, video.frames, action.tokens))};
}

std::vector<double> cross_attention_decode(const AffQuery& aff, const DensePointFeatures& dense,
                                           const ModelParams& params) {
  ad::Tape tape;
  const BoundParams p(tape, params, false);
  const ad::Var logits = decode_logits(tape, p, tape.constant(aff.embedding), tape.constant(dense.features));
  const auto values = tape.value(logits).values();
  return {values.begin(), values.end()};
}

}  // namespace afford3d::model
