#include "any2point/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "any2point/checkpoint.hpp"
#include "any2point/error.hpp"

namespace a2p {

std::string pe_mode_name(PEMode m) {
  switch (m) {
    case PEMode::kVirtualProjection: return "virtual_projection";
    case PEMode::kSinusoidal3D: return "sinusoidal_3d";
    case PEMode::kLearnable3D: return "learnable_3d";
    case PEMode::kNone: return "none";
  }
  return "none";
}

PEMode parse_pe_mode(const std::string& name) {
  if (name == "virtual_projection") return PEMode::kVirtualProjection;
  if (name == "sinusoidal_3d") return PEMode::kSinusoidal3D;
  if (name == "learnable_3d") return PEMode::kLearnable3D;
  if (name == "none") return PEMode::kNone;
  throw ConfigError("unknown pe_mode '" + name + "'");
}

void ModelConfig::validate() const {
  tokenizer.validate();
  projection.validate();
  adapter.validate();
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (insertion_depth < -1) throw ConfigError("insertion_depth must be >= 0, or -1 for all");
  if (learnable_pe_hidden < 1) throw ConfigError("learnable_pe_hidden must be >= 1");
}

Mat sinusoidal_pe_3d(const Coords& coords, int dim) {
  const int f = dim / 6;
  Mat out = Mat::Zero(coords.rows(), dim);
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const double pos = (coords(i, a) + 1.0) * 50.0;
      for (int k = 0; k < f; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / f);
        out(i, a * 2 * f + 2 * k) = std::sin(pos * w);
        out(i, a * 2 * f + 2 * k + 1) = std::cos(pos * w);
      }
    }
  }
  return out;
}

namespace {

int resolved_depth(const ModelConfig& cfg, int n_blocks) {
  if (!cfg.use_adapters) return 0;
  return cfg.insertion_depth < 0 ? n_blocks : std::min(cfg.insertion_depth, n_blocks);
}

// Registers every trainable tensor in a fixed order. The tokenizer goes to
// `frozen` instead when it is not trained.
void init_trainables(const ModelConfig& cfg, int dim, int n_blocks, ad::ParamStore& params,
                     ad::ParamStore& frozen) {
  std::mt19937_64 rng(cfg.init_seed);
  init_tokenizer_params(cfg.train_tokenizer ? params : frozen, cfg.tokenizer, rng);
  if (cfg.pe_mode == PEMode::kLearnable3D) {
    const int h = cfg.learnable_pe_hidden;
    params.add("pe3d.fc1_w", kaiming_uniform(3, h, rng));
    params.add("pe3d.fc1_b", Mat::Zero(1, h));
    params.add("pe3d.fc2_w", kaiming_uniform(h, dim, rng) * 0.1);
    params.add("pe3d.fc2_b", Mat::Zero(1, dim));
  }
  for (int b = 0; b < resolved_depth(cfg, n_blocks); ++b) {
    init_adapter_params(params, b, dim, cfg.adapter, rng);
  }
  params.add("head.w", kaiming_uniform(dim, cfg.num_classes, rng));
  params.add("head.b", Mat::Zero(1, cfg.num_classes));
}

ModelConfig synced(ModelConfig cfg) {
  cfg.adapter.mode = cfg.projection.mode;
  return cfg;
}

}  // namespace

Model::Model(const ModelConfig& cfg, const BackboneBundle& backbone)
    : cfg_(synced(cfg)), backbone_(&backbone) {
  cfg_.validate();
  const BackboneConfig& bb = backbone.config;
  if (cfg_.tokenizer.out_dim() != bb.dim) {
    throw DimMismatch("tokenizer emits " + std::to_string(cfg_.tokenizer.out_dim()) +
                      "-wide tokens, backbone dim is " + std::to_string(bb.dim));
  }
  if (cfg_.pe_mode == PEMode::kVirtualProjection) {
    const PETable& pe = backbone.pe;
    if (pe.mode != cfg_.projection.mode) {
      throw ModeMismatch("backbone PE table is " + mode_name(pe.mode) + " but projection is " +
                         mode_name(cfg_.projection.mode));
    }
    const bool fits = pe.mode == ProjectionMode::kLine1D
                          ? pe.rows == cfg_.projection.line_length
                          : pe.rows == cfg_.projection.grid_rows() &&
                                pe.cols == cfg_.projection.grid_cols();
    if (!fits) throw ModeMismatch("backbone PE table geometry does not match projection config");
  }
  basis_ = make_view_basis(cfg_.projection);
  init_trainables(cfg_, bb.dim, bb.n_blocks, params_, frozen_);
}

int Model::depth() const { return resolved_depth(cfg_, backbone_->config.n_blocks); }

PreparedSample Model::prepare(const PointCloud& cloud) const {
  PreparedSample s;
  s.plan = plan_tokenizer(cloud.points, cfg_.tokenizer);
  s.coords = s.plan.levels.back();
  s.positions = project_tokens(s.coords, basis_, cfg_.projection);
  if (depth() > 0) s.context = make_adapter_context(s.coords, s.positions, cfg_.adapter);
  if (cfg_.pe_mode == PEMode::kVirtualProjection) {
    s.pe = average_pe(s.positions, backbone_->pe);
  } else if (cfg_.pe_mode == PEMode::kSinusoidal3D) {
    s.pe = sinusoidal_pe_3d(s.coords, backbone_->config.dim);
  }
  s.label = cloud.label.value_or(-1);
  return s;
}

namespace {

BackboneOutput encode(ad::Tape& t, const Model& m, const PreparedSample& s,
                      ForwardTrace* trace) {
  using namespace ad;
  const ModelConfig& cfg = m.config();
  Var x = tokenize(t, s.plan, cfg.tokenizer);
  if (s.pe.size() != 0) {
    x = add(t, x, t.constant_ref(s.pe));
  } else if (cfg.pe_mode == PEMode::kLearnable3D) {
    const Var c = t.constant(Mat(s.coords));
    const Var h = gelu(t, linear(t, c, t.param("pe3d.fc1_w"), t.param("pe3d.fc1_b")));
    x = add(t, x, linear(t, h, t.param("pe3d.fc2_w"), t.param("pe3d.fc2_b")));
  }
  AdapterHook hook;
  hook.config = &cfg.adapter;
  hook.context = &s.context;
  hook.insertion_depth = m.depth();
  hook.position = cfg.adapter_position;
  return forward(t, m.backbone(), x, m.depth() > 0 ? &hook : nullptr, trace);
}

}  // namespace

ad::Var Model::logits(ad::Tape& t, const PreparedSample& s, ForwardTrace* trace) const {
  const BackboneOutput out = encode(t, *this, s, trace);
  const ad::Var feat = cfg_.readout == Readout::kCls ? out.cls : ad::mean_rows(t, out.tokens);
  return ad::linear(t, feat, t.param("head.w"), t.param("head.b"));
}

double Model::loss(const std::vector<PreparedSample>& batch, ad::GradMap* grads) const {
  if (batch.empty()) throw ConfigError("empty batch");
  double total = 0.0;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const PreparedSample& s : batch) {
    ad::Tape t(&params_, grads, &frozen_);
    const ad::Var l = ad::scale(t, ad::cross_entropy(t, logits(t, s), {s.label}), w);
    total += t.value(l)(0, 0);
    if (grads) t.backward(l);
  }
  return total;
}

int Model::predict(const PreparedSample& s) const {
  ad::Tape t(&params_, nullptr, &frozen_);
  const Mat& z = t.value(logits(t, s));
  Eigen::Index arg = 0;
  z.row(0).maxCoeff(&arg);
  return static_cast<int>(arg);
}

Model::Inspection Model::inspect(const PreparedSample& s) const {
  ad::Tape t(&params_, nullptr, &frozen_);
  Inspection out;
  const BackboneOutput o = encode(t, *this, s, &out.trace);
  out.tokens = t.value(o.tokens);
  out.cls = t.value(o.cls);
  return out;
}

ParamReport Model::param_report() const {
  ParamReport r;
  r.trainable = params_.scalar_count();
  r.total = r.trainable + frozen_.scalar_count() + backbone_->param_count();
  r.ratio = static_cast<double>(r.trainable) / static_cast<double>(r.total);
  return r;
}

void Model::save(const std::filesystem::path& dir) const {
  Checkpoint ckpt;
  ckpt.kind = "trainables";
  ckpt.config = {{"backbone_sha256", backbone_->sha256()}};
  for (int i = 0; i < params_.size(); ++i) {
    const Mat& v = params_.value(i);
    ckpt.tensors.push_back({params_.name(i), {v.rows(), v.cols()}, v});
  }
  save_checkpoint(dir, ckpt);
}

void Model::load(const std::filesystem::path& dir) {
  const Checkpoint ckpt = load_checkpoint_file(dir);
  if (ckpt.kind != "trainables") throw ManifestError("checkpoint kind is not 'trainables'");
  if (static_cast<int>(ckpt.tensors.size()) != params_.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                     " tensors, model expects " + std::to_string(params_.size()));
  }
  for (int i = 0; i < params_.size(); ++i) {
    const NamedTensor& t = ckpt.get(params_.name(i));
    Mat& v = params_.value(i);
    if (t.value.rows() != v.rows() || t.value.cols() != v.cols()) {
      throw ShapeError("tensor '" + t.name + "' is " + std::to_string(t.value.rows()) + "x" +
                       std::to_string(t.value.cols()) + ", model expects " +
                       std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
    }
    v = t.value;
  }
}

long long backbone_param_count(const BackboneConfig& cfg) {
  const long long d = cfg.dim, h = cfg.ffn_dim();
  const long long block = 4 * d                  // two layer norms
                          + d * 3 * d + 3 * d    // qkv
                          + d * d + d            // output projection
                          + d * h + h + h * d + d;
  return cfg.n_blocks * block + 2 * d + d + static_cast<long long>(cfg.pe_rows) * cfg.pe_cols * d;
}

long long expected_trainable_count(const ModelConfig& cfg, const BackboneConfig& bb) {
  long long n = 0;
  if (cfg.train_tokenizer) n += tokenizer_param_count(cfg.tokenizer);
  if (cfg.pe_mode == PEMode::kLearnable3D) {
    const long long h = cfg.learnable_pe_hidden;
    n += 3 * h + h + h * bb.dim + bb.dim;
  }
  n += resolved_depth(cfg, bb.n_blocks) * adapter_param_count(bb.dim, cfg.adapter);
  n += static_cast<long long>(bb.dim) * cfg.num_classes + cfg.num_classes;
  return n;
}

ParamReport param_report(const ModelConfig& cfg, const BackboneConfig& bb) {
  cfg.validate();
  bb.validate();
  if (cfg.tokenizer.out_dim() != bb.dim) throw DimMismatch("tokenizer width differs from backbone dim");
  ad::ParamStore params, frozen;
  init_trainables(synced(cfg), bb.dim, bb.n_blocks, params, frozen);
  ParamReport r;
  r.trainable = params.scalar_count();
  r.total = r.trainable + frozen.scalar_count() + backbone_param_count(bb);
  r.ratio = static_cast<double>(r.trainable) / static_cast<double>(r.total);
  return r;
}

}  // namespace a2p
