#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "any2point/autodiff.hpp"
#include "any2point/backbone.hpp"
#include "any2point/model.hpp"
#include "any2point/pointcloud.hpp"

namespace a2p {

// ---- procedural benchmark --------------------------------------------------

struct DatasetSpec {
  std::vector<ShapeKind> classes = all_shape_kinds();
  int train_per_class = 100;
  int test_per_class = 50;
  int n_points = 512;
  double jitter = 0.01;
  // per-cloud random yaw about the vertical axis and per-axis stretch in
  // [1 - stretch, 1 + stretch], applied before normalization
  bool random_pose = true;
  double stretch = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  std::vector<PointCloud> train;
  std::vector<PointCloud> test;
};

/// Labels are positions in spec.classes. Deterministic in spec. Coordinates
/// are rounded to float32 so a written dataset reads back identically.
Dataset make_shape_dataset(const DatasetSpec& spec);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

/// One A2PC file per cloud plus index.json listing the exact splits.
void write_dataset(const std::filesystem::path& dir, const Dataset& data, const DatasetSpec& spec);
Dataset read_dataset(const std::filesystem::path& dir);

// ---- optimization ----------------------------------------------------------

/// lr0 * (1 + cos(pi * epoch / total)) / 2.
double cosine_lr(int epoch, int total_epochs, double lr0);

class AdamW {
 public:
  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  /// One decoupled-weight-decay step. Parameters without a gradient entry are
  /// treated as having a zero gradient.
  void step(ad::ParamStore& params, const ad::GradMap& grads, double lr);
  int steps() const { return t_; }

 private:
  double wd_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<Mat> m_, v_;
};

// ---- run configuration -----------------------------------------------------

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 0.05;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int threads = 1;
  int eval_every = 1;  // 0: evaluate only after the last epoch
  bool augment = true;
  AugmentConfig augmentation;

  ModelConfig model;
  BackboneConfig backbone;        // shape of the random backbone
  std::uint64_t backbone_seed = 1234;
  std::string backbone_path;      // load a checkpoint instead when set
  DatasetSpec data;
  std::string data_dir;           // read gen-data output instead when set

  void validate() const;
};

/// Flat JSON view; every key is also a CLI flag.
nlohmann::json to_json(const TrainConfig& cfg);
/// Applies the keys present in `j`; unknown keys throw ConfigError.
void apply_json(TrainConfig& cfg, const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

/// The random-backbone shape implied by cfg: PE layout follows the projection.
BackboneConfig backbone_config_for(const TrainConfig& cfg);
/// Loads cfg.backbone_path or builds the seeded random backbone.
BackboneBundle make_backbone(const TrainConfig& cfg);
/// Reads cfg.data_dir or generates cfg.data.
Dataset load_dataset(const TrainConfig& cfg);

/// The head-only linear probe derived from `cfg`: frozen tokenizer, no PE,
/// no adapters.
TrainConfig head_only(TrainConfig cfg);

// ---- training --------------------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;  // mean train loss over the epoch's batches
  double acc = -1.0;  // test accuracy; -1 when not evaluated
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  ParamReport report;
  double final_acc = -1.0;
};

TrainResult train(Model& model, const std::vector<PointCloud>& train_set,
                  const std::vector<PointCloud>* test_set, const TrainConfig& cfg);

/// Single forward per sample, no augmentation, argmax accuracy.
double evaluate(const Model& model, const std::vector<PointCloud>& data, int threads = 1);

/// Writes "epoch,loss,acc,lr"; values printed with round-trip precision.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& h);

/// Mean-loss gradient of `batch` over `threads` workers. Contiguous chunks are
/// reduced in worker order, so a fixed thread count is deterministic.
double batch_gradient(const Model& model, const std::vector<PreparedSample>& batch, int threads,
                      ad::GradMap& grads);

/// Seeded per-sample stream so augmentation does not depend on scheduling.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace a2p
