#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "any2point/error.hpp"
#include "any2point/model.hpp"
#include "any2point/training.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "toy.hpp"

namespace fs = std::filesystem;

namespace a2p {
namespace {

struct Toy {
  TrainConfig cfg;
  BackboneBundle bb;
  explicit Toy(TrainConfig c) : cfg(std::move(c)), bb(make_backbone(cfg)) {}
};

std::vector<PreparedSample> prepare(const Model& m, int n, std::uint64_t seed) {
  std::vector<PreparedSample> out;
  for (const PointCloud& c : toy::clouds(n, m.config().tokenizer.points_in, seed)) {
    out.push_back(m.prepare(c));
  }
  return out;
}

oracle::GradReport model_gradients(Model& m, const std::vector<PreparedSample>& batch) {
  return oracle::check_gradients(m.params(), [&](ad::GradMap* g) { return m.loss(batch, g); });
}

TEST(ModelGradients, PlaneModeGuidedAdapterAfterEveryBlock) {
  Toy t(toy::config());
  Model m(t.cfg.model, t.bb);
  const auto rep = model_gradients(m, prepare(m, 2, 1));
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
}

TEST(ModelGradients, LineModeParallelAdapterMeanReadoutLearnablePE) {
  TrainConfig c = toy::config(ProjectionMode::kLine1D);
  c.model.adapter_position = AdapterPosition::kParallel;
  c.model.readout = Readout::kMean;
  c.model.pe_mode = PEMode::kLearnable3D;
  c.model.insertion_depth = 1;
  Toy t(c);
  Model m(t.cfg.model, t.bb);
  const auto rep = model_gradients(m, prepare(m, 2, 2));
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
}

TEST(ModelGradients, BeforePositionMlpBaselineSinusoidalPE) {
  TrainConfig c = toy::config();
  c.model.adapter_position = AdapterPosition::kBefore;
  c.model.adapter.variant = AdapterVariant::kMlpBaseline;
  c.model.pe_mode = PEMode::kSinusoidal3D;
  Toy t(c);
  Model m(t.cfg.model, t.bb);
  const auto rep = model_gradients(m, prepare(m, 2, 3));
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
}

TEST(ModelGradients, VoxelGuidanceMaxPoolDetachedBaseline) {
  TrainConfig c = toy::config();
  c.model.adapter.guidance = GuidanceMode::kVoxel3D;
  c.model.adapter.pool = PoolMode::kMax;
  c.model.adapter.detach_baseline = true;
  c.model.adapter.tau = 0.5;
  Toy t(c);
  Model m(t.cfg.model, t.bb);
  const auto rep = model_gradients(m, prepare(m, 2, 4));
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
}

TEST(ParamCount, RegistryMatchesFormulaAcrossVariants) {
  for (ProjectionMode mode : {ProjectionMode::kPlane2D, ProjectionMode::kLine1D}) {
    for (AdapterVariant v : {AdapterVariant::kFull, AdapterVariant::kMlpBaseline}) {
      for (PEMode pe : {PEMode::kVirtualProjection, PEMode::kLearnable3D, PEMode::kNone}) {
        for (int depth : {-1, 0, 1}) {
          TrainConfig c = toy::config(mode);
          c.model.adapter.variant = v;
          c.model.pe_mode = pe;
          c.model.insertion_depth = depth;
          c.model.train_tokenizer = depth != 0;
          Toy t(c);
          Model m(t.cfg.model, t.bb);
          const long long want = expected_trainable_count(c.model, t.bb.config);
          EXPECT_EQ(m.param_report().trainable, want);
          EXPECT_EQ(param_report(c.model, t.bb.config).trainable, want);
          EXPECT_EQ(param_report(c.model, t.bb.config).total, m.param_report().total);
        }
      }
    }
  }
}

TEST(ParamCount, BackboneFormulaMatchesAllocatedBundle) {
  for (ProjectionMode mode : {ProjectionMode::kPlane2D, ProjectionMode::kLine1D}) {
    const TrainConfig c = toy::config(mode);
    const BackboneBundle b = make_backbone(c);
    EXPECT_EQ(backbone_param_count(b.config), b.param_count());
  }
}

TEST(ParamCount, HeadOnlyTrainsExactlyTheHead) {
  const TrainConfig c = head_only(toy::config());
  Toy t(c);
  Model m(t.cfg.model, t.bb);
  EXPECT_EQ(m.param_report().trainable, 16 * 5 + 5);
  EXPECT_EQ(m.frozen_params().scalar_count(), tokenizer_param_count(c.model.tokenizer));
}

TEST(ParamCount, DoubledBottleneckDoublesAdapterWeights) {
  TrainConfig c = toy::config();
  c.model.adapter.variant = AdapterVariant::kMlpBaseline;
  c.model.pe_mode = PEMode::kNone;
  c.model.train_tokenizer = false;
  const long long head = 16 * 5 + 5;
  c.model.adapter.bottleneck_dim = 4;
  const long long a = expected_trainable_count(c.model, c.backbone) - head;
  c.model.adapter.bottleneck_dim = 8;
  const long long b = expected_trainable_count(c.model, c.backbone) - head;
  EXPECT_EQ(b, 2 * a);
}

TEST(Model, ValidatesAgainstBackbone) {
  TrainConfig c = toy::config();
  const BackboneBundle bb = make_backbone(c);
  ModelConfig wrong_dim = c.model;
  wrong_dim.tokenizer.dims = {8, 12, 20};
  EXPECT_THROW((void)Model(wrong_dim, bb), DimMismatch);
  ModelConfig wrong_mode = c.model;
  wrong_mode.projection.mode = ProjectionMode::kLine1D;
  EXPECT_THROW((void)Model(wrong_mode, bb), ModeMismatch);
  ModelConfig wrong_grid = c.model;
  wrong_grid.projection.patch_size = 32;
  EXPECT_THROW((void)Model(wrong_grid, bb), ModeMismatch);
  // without virtual projection the PE table is never read
  wrong_grid.pe_mode = PEMode::kNone;
  EXPECT_NO_THROW((void)Model(wrong_grid, bb));
}

TEST(Model, PreparedPEIsTheViewAverageOfTheBackboneTable) {
  Toy t(toy::config());
  Model m(t.cfg.model, t.bb);
  const PreparedSample s = prepare(m, 1, 5)[0];
  ASSERT_EQ(s.coords.rows(), 12);
  const Mat want = oracle::average_pe(s.coords, m.config().projection, t.bb.pe);
  EXPECT_LE((s.pe - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, Sinusoidal3DLayout) {
  Coords c(1, 3);
  c << 0.1, -0.2, 0.3;
  const Mat pe = sinusoidal_pe_3d(c, 20);  // 3 frequencies per axis, 2 pad columns
  ASSERT_EQ(pe.cols(), 20);
  for (int a = 0; a < 3; ++a) {
    const double pos = (c(0, a) + 1.0) * 50.0;
    for (int k = 0; k < 3; ++k) {
      const double w = std::pow(10000.0, -k / 3.0);
      EXPECT_NEAR(pe(0, 6 * a + 2 * k), std::sin(pos * w), 1e-14);
      EXPECT_NEAR(pe(0, 6 * a + 2 * k + 1), std::cos(pos * w), 1e-14);
    }
  }
  EXPECT_EQ(pe(0, 18), 0.0);
  EXPECT_EQ(pe(0, 19), 0.0);
}

TEST(Model, InspectionExposesAttentionAndEnsembleWeights) {
  Toy t(toy::config());
  Model m(t.cfg.model, t.bb);
  const Model::Inspection in = m.inspect(prepare(m, 1, 6)[0]);
  EXPECT_EQ(in.trace.attention.size(), 2u);
  ASSERT_EQ(in.trace.ensemble_weights.size(), 2u);
  EXPECT_EQ(in.trace.ensemble_weights[0].rows(), 12);
  EXPECT_EQ(in.trace.ensemble_weights[0].cols(), 2);
  EXPECT_EQ(in.tokens.rows(), 12);
  EXPECT_EQ(in.cls.cols(), 16);
}

TEST(Model, SaveLoadRoundTripsTrainables) {
  const fs::path dir = fs::temp_directory_path() / "a2p_test_model_save";
  fs::remove_all(dir);
  Toy t(toy::config());
  Model a(t.cfg.model, t.bb);
  a.save(dir);
  ModelConfig other = t.cfg.model;
  other.init_seed = 99;
  Model b(other, t.bb);
  b.load(dir);
  for (int i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(b.params().value(i), a.params().value(i).cast<float>().cast<double>());
  }
  ModelConfig bigger = t.cfg.model;
  bigger.adapter.hidden_dim = 9;
  Model c(bigger, t.bb);
  EXPECT_THROW(c.load(dir), ShapeError);
  fs::remove_all(dir);
}

TEST(Model, BackboneIsNotWrittenByTraining) {
  TrainConfig c = toy::config();
  c.epochs = 1;
  const BackboneBundle bb = make_backbone(c);
  const std::string before = bb.sha256();
  Model m(c.model, bb);
  const Dataset d = make_shape_dataset(c.data);
  train(m, d.train, nullptr, c);
  EXPECT_EQ(bb.sha256(), before);
}

}  // namespace
}  // namespace a2p
