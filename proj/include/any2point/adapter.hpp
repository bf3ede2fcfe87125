#pragma once

// Guided adapter: tokens are grouped per view by their projected 1D segment or
// 2D patch, attend within each group, are pooled and propagated back to the
// members, and the M per-view results are fused by cosine similarity against
// a non-parametric voxel-pooled baseline.

#include <random>
#include <string>
#include <vector>

#include "any2point/autodiff.hpp"
#include "any2point/projection.hpp"
#include "any2point/tensor.hpp"

namespace a2p {

enum class AdapterVariant { kFull, kMlpBaseline };
enum class EnsembleMode { kAdaptive, kMean };
enum class GuidanceMode { kProjected, kVoxel3D };
enum class PoolMode { kMean, kMax };

struct AdapterConfig {
  ProjectionMode mode = ProjectionMode::kPlane2D;
  int patch_size = 26;     // 2D grouping granularity, plane pixels
  int segment_size = 2;    // 1D grouping granularity, line positions
  double grid_size_3d = 0.16;
  AdapterVariant variant = AdapterVariant::kFull;
  int hidden_dim = 16;      // width of the grouped attention (full variant)
  int bottleneck_dim = 16;  // mlp_baseline variant
  double tau = 1.0;
  EnsembleMode ensemble = EnsembleMode::kAdaptive;
  GuidanceMode guidance = GuidanceMode::kProjected;
  PoolMode pool = PoolMode::kMean;
  // Treat the baseline B as a constant during backprop.
  bool detach_baseline = false;

  void validate() const;
};

/// Per-sample grouping shared by every adapter block.
struct AdapterContext {
  std::vector<Partition> view_groups;  // one partition per view
  Partition voxel_groups;              // baseline branch grouping
};

Partition group_tokens(const ProjectedPositions& positions, int view, const AdapterConfig& cfg);
/// Voxel grouping with key floor((coord + 1) / grid) per axis.
Partition voxel_groups(const Coords& coords, double grid);
AdapterContext make_adapter_context(const Coords& coords, const ProjectedPositions& positions,
                                    const AdapterConfig& cfg);

/// Non-parametric branch: B_i = mean feature of i's voxel.
Mat baseline_branch(const Coords& coords, const Mat& features, double grid);

/// Softmax-of-cosine weights, N x M.
Mat ensemble_weights(const Mat& baseline, const std::vector<Mat>& views, double tau = 1.0);
Mat adaptive_ensemble(const Mat& baseline, const std::vector<Mat>& views, double tau = 1.0);

struct AttentionWeights {
  Mat q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
};

/// Grouped self-attention, output projection, then pool + propagate.
Mat local_aggregate(const Mat& features, const Partition& partition, const AttentionWeights& w,
                    PoolMode pool = PoolMode::kMean);

std::string adapter_prefix(int block);
void init_adapter_params(ad::ParamStore& store, int block, int dim, const AdapterConfig& cfg,
                         std::mt19937_64& rng);
long long adapter_param_count(int dim, const AdapterConfig& cfg);

/// Records one adapter application on `tape`; returns x + branch(x).
ad::Var adapter_forward(ad::Tape& tape, ad::Var x, const AdapterContext& ctx,
                        const AdapterConfig& cfg, int block, Mat* weights_out = nullptr);
/// branch(x) only (used by the parallel insertion position).
ad::Var adapter_branch(ad::Tape& tape, ad::Var x, const AdapterContext& ctx,
                       const AdapterConfig& cfg, int block, Mat* weights_out = nullptr);

/// Gradient-free evaluation against a ParamStore.
Mat adapter_forward(const Mat& features, const AdapterContext& ctx, const AdapterConfig& cfg,
                    const ad::ParamStore& params, int block);

/// Cosine similarity of every token to `cls`, clustered by 1D k-means.
std::vector<int> similarity_dump(const RowVec& cls, const Mat& tokens, int k_clusters,
                                 std::vector<double>* similarities = nullptr);
/// Exact 1D k-means (minimum within-cluster sum of squares, at most k
/// clusters); labels are ordered by ascending cluster center.
std::vector<int> kmeans_1d(const std::vector<double>& values, int k);

}  // namespace a2p
