#pragma once

// Frozen source-modality transformer: pre-norm blocks (multi-head
// self-attention + GELU FFN), a cls token, a final norm and the source PE
// table. Guided adapters hook in around each FFN.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "any2point/adapter.hpp"
#include "any2point/autodiff.hpp"
#include "any2point/checkpoint.hpp"
#include "any2point/projection.hpp"

namespace a2p {

enum class Modality { kLanguage, kVision, kAudio, kSynthetic };
std::string modality_name(Modality m);
Modality parse_modality(const std::string& name);

struct BackboneConfig {
  int n_blocks = 4;
  int dim = 64;
  int n_heads = 4;
  double ffn_ratio = 4.0;
  Modality modality = Modality::kVision;
  // PE table geometry: line (rows = L, cols = 1) or plane patch grid
  ProjectionMode pe_layout = ProjectionMode::kPlane2D;
  int pe_rows = 19;
  int pe_cols = 19;

  int ffn_dim() const { return static_cast<int>(dim * ffn_ratio); }
  void validate() const;
};

struct BlockWeights {
  Mat ln1_g, ln1_b;
  Mat qkv_w, qkv_b;
  Mat proj_w, proj_b;
  Mat ln2_g, ln2_b;
  Mat fc1_w, fc1_b;
  Mat fc2_w, fc2_b;
};

struct BackboneBundle {
  BackboneConfig config;
  std::vector<BlockWeights> blocks;
  Mat norm_g, norm_b;
  Mat cls_token;  // 1 x D
  PETable pe;
  bool frozen = true;

  /// Every frozen tensor with its canonical checkpoint name, in a fixed order.
  std::vector<std::pair<std::string, const Mat*>> tensors() const;
  long long param_count() const;
  /// SHA-256 over the raw float64 bytes of tensors(), in order.
  std::string sha256() const;
};

enum class AdapterPosition { kAfter, kBefore, kParallel };
std::string position_name(AdapterPosition p);
AdapterPosition parse_adapter_position(const std::string& name);

/// How adapters take part in a forward pass.
struct AdapterHook {
  const AdapterConfig* config = nullptr;
  const AdapterContext* context = nullptr;
  int insertion_depth = 0;  // blocks [0, depth) carry an adapter
  AdapterPosition position = AdapterPosition::kAfter;
};

struct ForwardTrace {
  std::vector<Mat> attention;  // per block, head-averaged (N+1) x (N+1)
  std::vector<Mat> ensemble_weights;  // per adapted block, N x M
};

struct BackboneOutput {
  ad::Var tokens;  // N x D
  ad::Var cls;     // 1 x D
};

/// Fan-in scaled random weights rounded to float32, sinusoidal PE table.
BackboneBundle init_random_backbone(const BackboneConfig& cfg, std::uint64_t seed);

/// Throws ManifestError / ShapeError / ChecksumError naming the tensor.
BackboneBundle load_checkpoint(const std::filesystem::path& dir);
void save_backbone(const std::filesystem::path& dir, const BackboneBundle& bundle,
                   const nlohmann::json& flags = nlohmann::json::object());

nlohmann::json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

/// Records the frozen transformer on `tape`. Backbone tensors enter as
/// constants; `hook` may be null for an adapter-free pass.
BackboneOutput forward(ad::Tape& tape, const BackboneBundle& bundle, ad::Var tokens_in,
                       const AdapterHook* hook = nullptr, ForwardTrace* trace = nullptr);

struct ForwardResult {
  Mat tokens;
  RowVec cls;
};

/// Gradient-free forward over a TokenSet whose PEs are already applied.
ForwardResult forward(const BackboneBundle& bundle, const TokenSet& tokens_in,
                      const AdapterHook* hook = nullptr, const ad::ParamStore* adapter_params = nullptr,
                      ForwardTrace* trace = nullptr);

/// Head-averaged attention of the cls query to the N point tokens in `block`.
std::vector<double> attention_scores(const BackboneBundle& bundle, const TokenSet& tokens_in,
                                     int block, const AdapterHook* hook = nullptr,
                                     const ad::ParamStore* adapter_params = nullptr);

}  // namespace a2p
