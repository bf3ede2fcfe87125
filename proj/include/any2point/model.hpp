#pragma once

// Full classification pipeline: tokenizer -> positional encoding -> frozen
// backbone with guided adapters -> linear head. Owns the trainable registry;
// the backbone is borrowed and never written.

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "any2point/adapter.hpp"
#include "any2point/autodiff.hpp"
#include "any2point/backbone.hpp"
#include "any2point/pointcloud.hpp"
#include "any2point/projection.hpp"
#include "any2point/tokenizer.hpp"

namespace a2p {

enum class PEMode { kVirtualProjection, kSinusoidal3D, kLearnable3D, kNone };
std::string pe_mode_name(PEMode m);
PEMode parse_pe_mode(const std::string& name);

enum class Readout { kCls, kMean };

struct ModelConfig {
  TokenizerConfig tokenizer;
  ProjectionConfig projection;
  AdapterConfig adapter;
  bool use_adapters = true;
  int insertion_depth = -1;  // -1: every block
  AdapterPosition adapter_position = AdapterPosition::kAfter;
  PEMode pe_mode = PEMode::kVirtualProjection;
  Readout readout = Readout::kCls;
  int num_classes = 5;
  // false freezes the (randomly initialized) tokenizer, as in the linear probe
  bool train_tokenizer = true;
  int learnable_pe_hidden = 32;
  std::uint64_t init_seed = 0;

  void validate() const;
};

/// Per-axis sinusoids: floor(D/6) frequencies per axis, (sin, cos) pairs,
/// zero-padded to D columns.
Mat sinusoidal_pe_3d(const Coords& coords, int dim);

/// Geometry of one cloud resolved against a model: everything a forward pass
/// needs that does not depend on weights.
struct PreparedSample {
  TokenizerPlan plan;
  Coords coords;  // token centers
  ProjectedPositions positions;
  AdapterContext context;
  Mat pe;  // N x D fixed encoding; empty for learnable_3d and none
  int label = -1;
};

struct ParamReport {
  long long trainable = 0;
  long long total = 0;
  double ratio = 0.0;
};

class Model {
 public:
  /// `backbone` must outlive the model.
  Model(const ModelConfig& cfg, const BackboneBundle& backbone);

  const ModelConfig& config() const { return cfg_; }
  const BackboneBundle& backbone() const { return *backbone_; }
  const ViewBasis& basis() const { return basis_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  const ad::ParamStore& frozen_params() const { return frozen_; }
  int depth() const;

  PreparedSample prepare(const PointCloud& cloud) const;

  /// 1 x C logits recorded on `tape`.
  ad::Var logits(ad::Tape& tape, const PreparedSample& s, ForwardTrace* trace = nullptr) const;

  /// Mean cross-entropy over `batch`. With `grads` set, accumulates exact
  /// gradients of that mean loss.
  double loss(const std::vector<PreparedSample>& batch, ad::GradMap* grads = nullptr) const;

  int predict(const PreparedSample& s) const;

  struct Inspection {
    ForwardTrace trace;
    Mat tokens;
    RowVec cls;
  };
  Inspection inspect(const PreparedSample& s) const;

  ParamReport param_report() const;

  void save(const std::filesystem::path& dir) const;
  /// Loads trainable tensors saved by save(); names and shapes must match.
  void load(const std::filesystem::path& dir);

 private:
  ModelConfig cfg_;
  const BackboneBundle* backbone_;
  ViewBasis basis_;
  ad::ParamStore params_;
  ad::ParamStore frozen_;
};

/// Scalars a backbone of this shape holds, without allocating it.
long long backbone_param_count(const BackboneConfig& cfg);

/// Trainable count implied by `cfg` for a backbone of shape `bb`, computed
/// from layer shapes alone.
long long expected_trainable_count(const ModelConfig& cfg, const BackboneConfig& bb);

/// Parameter report from shapes alone, usable for configs too large to build.
ParamReport param_report(const ModelConfig& cfg, const BackboneConfig& bb);

}  // namespace a2p
