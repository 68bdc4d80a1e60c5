#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "afford3d/autodiff.hpp"
#include "afford3d/formats.hpp"
#include "afford3d/geometry.hpp"

namespace afford3d::model {

struct ModelConfig {
  std::size_t width = 64;         // D: point/query feature width
  std::size_t video_width = 64;   // D_v
  std::size_t action_width = 64;  // D_a
  std::size_t tokens = 64;        // M: FPS token centers
  std::size_t patch_k = 16;       // neighbors per token patch
  std::size_t frames = 8;         // F: sampled video frames
  double embedding_noise = 0.5;   // synthetic embeddings: noise around the affordance prototype

  void validate() const;
  /// Input width of the patch encoder: k center-relative offsets plus the center.
  std::size_t patch_input() const { return 3 * patch_k + 3; }
};

bool supported_frame_count(std::size_t frames);

/// F × D_v frame embeddings.
struct VideoTokens {
  ad::Tensor frames;
};

/// F × 2 × D_a latent action tokens (two per frame).
struct ActionTokens {
  ad::Tensor tokens;
};

/// Where a sample's video/action embeddings come from: an A3DW file holding
/// "video" and "action", or a synthetic draw keyed by (video_id, affordance, F).
struct EmbeddingSource {
  std::string video_id;
  std::string affordance;
  std::optional<std::filesystem::path> file;
};

std::uint64_t synthetic_seed(const std::string& video_id, const std::string& affordance,
                             std::size_t frames);

VideoTokens encode_video_stub(const EmbeddingSource& source, const ModelConfig& config);
ActionTokens encode_action_stub(const EmbeddingSource& source, const ModelConfig& config);
void save_embeddings(const std::filesystem::path& path, const VideoTokens& video,
                     const ActionTokens& action);

/// All trainable tensors, in a fixed order.
class ModelParams {
 public:
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);
  static ModelParams from_archive(const TensorArchive& archive, const ModelConfig& config);
  TensorArchive to_archive(std::optional<std::uint64_t> config_hash = std::nullopt) const;

  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::vector<NamedTensor>& tensors() { return tensors_; }
  const ad::Tensor& get(const std::string& name) const;
  ad::Tensor& get(const std::string& name);
  std::size_t index_of(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Throws Shape if any tensor disagrees with the configured widths.
  void validate(const ModelConfig& config) const;

 private:
  std::vector<NamedTensor> tensors_;
};

/// Names and shapes ModelParams::init produces for a config.
std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_layout(const ModelConfig& config);

/// M × D token embeddings and their centers (a subset of the normalized cloud).
struct TokenFeatures {
  ad::Tensor features;
  std::vector<Vec3> centers;
  std::vector<std::size_t> center_indices;
};

/// N × D features aligned with the cloud's points.
struct DensePointFeatures {
  ad::Tensor features;
};

/// 1 × D projected affordance query.
struct AffQuery {
  ad::Tensor embedding;
};

/// Geometry-only preprocessing of one cloud, reused across training steps.
struct PointGeometry {
  PointCloud cloud;                      // normalized
  std::vector<std::size_t> centers;      // FPS picks (indices into cloud)
  ad::Tensor patches;                    // M × (3k + 3)
  ad::Tensor interpolation;              // N × M propagation weights
};

PointGeometry prepare_geometry(const PointCloud& raw, const ModelConfig& config, std::uint64_t seed);

/// Rows of the N × M inverse-squared-distance 3-NN interpolation matrix.
ad::Tensor interpolation_matrix(std::span<const Vec3> centers, std::span<const Vec3> dense_coords);

TokenFeatures encode_points_stub(const PointCloud& cloud, const ModelParams& params,
                                 std::size_t tokens, std::size_t patch_k, std::uint64_t seed);
DensePointFeatures propagate_features(const TokenFeatures& tokens, std::span<const Vec3> dense_coords);
AffQuery fuse_aff_query(const VideoTokens& video, const ActionTokens& action, const ModelParams& params);
std::vector<double> cross_attention_decode(const AffQuery& aff, const DensePointFeatures& dense,
                                           const ModelParams& params);

struct Sample {
  PointCloud cloud;
  EmbeddingSource embeddings;
};

/// Per-point probabilities in (0,1).
std::vector<double> forward(const Sample& sample, const ModelParams& params, const ModelConfig& config,
                            std::uint64_t seed);

// ---- tape-level building blocks shared by forward, training, and gradient checks

/// Parameters bound as leaves on a tape.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ModelParams& params, bool requires_grad = true);
  ad::Var operator[](const std::string& name) const;
  const std::vector<ad::Var>& vars() const { return vars_; }

 private:
  std::vector<ad::Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

ad::Var encode_tokens(ad::Tape& tape, const BoundParams& p, const ad::Tensor& patches);
ad::Var fuse_query(ad::Tape& tape, const BoundParams& p, const ad::Tensor& video, const ad::Tensor& action);
/// N × 1 logits.
ad::Var decode_logits(ad::Tape& tape, const BoundParams& p, ad::Var aff, ad::Var dense);

/// Everything the differentiable part of the pipeline consumes for one sample.
struct PreparedSample {
  PointGeometry geometry;
  VideoTokens video;
  ActionTokens action;
  std::string affordance;
};

PreparedSample prepare_sample(const Sample& sample, const ModelConfig& config, std::uint64_t seed);

/// N × 1 probabilities on the tape.
ad::Var forward_probabilities(ad::Tape& tape, const BoundParams& p, const PreparedSample& sample);
std::vector<double> predict(const PreparedSample& sample, const ModelParams& params);

}  // namespace afford3d::model
