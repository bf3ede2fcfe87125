#pragma once

#include <random>
#include <vector>

#include "any2point/autodiff.hpp"
#include "any2point/pointcloud.hpp"
#include "any2point/tensor.hpp"

namespace a2p {

/// N feature rows paired with the 3D centers they were pooled around.
struct TokenSet {
  Mat features;  // N x D
  Coords coords;  // N x 3

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

/// Point-PN-lite tokenizer. Each stage halves the point count by FPS, groups
/// k neighbors around every center, encodes [relative xyz, neighbor feature]
/// with a linear + GELU, max- and mean-pools the neighborhood, concatenates the
/// center feature and projects to the stage width. Layers are biasless.
struct TokenizerConfig {
  int points_in = 512;
  int tokens_out = 64;
  int k_neighbors = 8;
  std::vector<int> dims = {32, 48, 64};  // one width per stage; last = backbone dim

  int stages() const { return static_cast<int>(dims.size()); }
  int out_dim() const { return dims.empty() ? 3 : dims.back(); }
  void validate() const;
};

/// Geometry-only schedule of one tokenization: FPS centers and k-NN tables per
/// stage. Depends on coordinates only, never on weights.
struct TokenizerPlan {
  struct Stage {
    std::vector<int> centers;     // indices into the previous level
    std::vector<int> neighbors;   // centers.size() * k indices, row-major
    Mat relative;                 // (centers * k) x 3 offsets neighbor - center
  };
  std::vector<Stage> stages;
  std::vector<Coords> levels;  // levels[0] = input cloud, levels[s+1] = stage s centers
};

TokenizerPlan plan_tokenizer(const Coords& points, const TokenizerConfig& cfg);

void init_tokenizer_params(ad::ParamStore& store, const TokenizerConfig& cfg,
                           std::mt19937_64& rng);

/// Exact trainable scalar count implied by `cfg`.
long long tokenizer_param_count(const TokenizerConfig& cfg);

/// Records the tokenizer on `tape`; returns the N x D feature Var.
ad::Var tokenize(ad::Tape& tape, const TokenizerPlan& plan, const TokenizerConfig& cfg);

/// Convenience evaluation without gradients. Throws ConfigMismatch when the
/// cloud size differs from cfg.points_in.
TokenSet tokenize(const PointCloud& cloud, const TokenizerConfig& cfg,
                  const ad::ParamStore& params);

/// Kaiming-style uniform init with variance 1/fan_in.
Mat kaiming_uniform(int fan_in, int fan_out, std::mt19937_64& rng);

}  // namespace a2p
