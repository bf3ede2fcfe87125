#include "any2point/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Geometry>

#include "any2point/error.hpp"
#include "any2point/io.hpp"

namespace a2p {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

namespace {

// Static contiguous split of [0, n) over `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int worker, int lo, int hi)>& fn) {
  const int w = std::max(1, std::min(threads, n));
  if (w == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (int k = 0; k < w; ++k) {
    const int lo = static_cast<int>(static_cast<long long>(n) * k / w);
    const int hi = static_cast<int>(static_cast<long long>(n) * (k + 1) / w);
    pool.emplace_back([&, k, lo, hi] {
      try {
        fn(k, lo, hi);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Coords round_to_float32(Coords c) {
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    c.data()[i] = static_cast<double>(static_cast<float>(c.data()[i]));
  }
  return c;
}

}  // namespace

// ---- dataset ---------------------------------------------------------------

void DatasetSpec::validate() const {
  if (classes.size() < 2) throw ConfigError("dataset needs at least two classes");
  if (train_per_class < 1 || test_per_class < 0) throw ConfigError("bad per-class counts");
  if (n_points < 1) throw ConfigError("n_points must be >= 1");
  if (!(jitter >= 0.0)) throw ConfigError("jitter must be >= 0");
  if (!(stretch >= 0.0 && stretch < 1.0)) throw ConfigError("stretch must be in [0, 1)");
}

namespace {

// Random yaw about the vertical axis and axis stretch, renormalized.
Coords random_pose(const Coords& pts, double stretch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> yaw(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> u(1.0 - stretch, 1.0 + stretch);
  const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw(rng), Eigen::Vector3d::UnitY()).toRotationMatrix();
  const Eigen::Vector3d s(u(rng), u(rng), u(rng));
  Coords out(pts.rows(), 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Eigen::Vector3d p = pts.row(i).transpose().cwiseProduct(s);
    out.row(i) = (r * p).transpose();
  }
  return normalize_to_unit_sphere(out);
}

}  // namespace

Dataset make_shape_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset d;
  for (int split = 0; split < 2; ++split) {
    const int per_class = split == 0 ? spec.train_per_class : spec.test_per_class;
    auto& out = split == 0 ? d.train : d.test;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
      for (int k = 0; k < per_class; ++k) {
        ShapeSpec s;
        s.kind = spec.classes[c];
        s.n_points = spec.n_points;
        s.jitter_sigma = spec.jitter;
        s.seed = mix_seed(spec.seed, c, static_cast<std::uint64_t>(k) * 2 + split);
        PointCloud cloud = generate_shape(s);
        if (spec.random_pose) {
          cloud.points = random_pose(cloud.points, spec.stretch, mix_seed(s.seed, 0x705e));
        }
        cloud.points = round_to_float32(cloud.points);
        cloud.label = static_cast<int>(c);
        out.push_back(std::move(cloud));
      }
    }
  }
  return d;
}

json to_json(const DatasetSpec& spec) {
  json classes = json::array();
  for (ShapeKind k : spec.classes) classes.push_back(shape_name(k));
  return {{"classes", classes},
          {"train_per_class", spec.train_per_class},
          {"test_per_class", spec.test_per_class},
          {"n_points", spec.n_points},
          {"jitter", spec.jitter},
          {"random_pose", spec.random_pose},
          {"stretch", spec.stretch},
          {"seed", spec.seed}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "classes") {
        s.classes.clear();
        for (const auto& n : value) s.classes.push_back(parse_shape_kind(n.get<std::string>()));
      } else if (key == "train_per_class") {
        s.train_per_class = value.get<int>();
      } else if (key == "test_per_class") {
        s.test_per_class = value.get<int>();
      } else if (key == "n_points") {
        s.n_points = value.get<int>();
      } else if (key == "jitter") {
        s.jitter = value.get<double>();
      } else if (key == "random_pose") {
        s.random_pose = value.get<bool>();
      } else if (key == "stretch") {
        s.stretch = value.get<double>();
      } else if (key == "seed") {
        s.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown dataset key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("bad value for dataset key '" + key + "': " + e.what());
    }
  }
  s.validate();
  return s;
}

void write_dataset(const fs::path& dir, const Dataset& data, const DatasetSpec& spec) {
  std::error_code ec;
  fs::create_directories(dir / "train", ec);
  fs::create_directories(dir / "test", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json index = {{"spec", to_json(spec)}, {"train", json::array()}, {"test", json::array()}};
  for (int split = 0; split < 2; ++split) {
    const auto& clouds = split == 0 ? data.train : data.test;
    const std::string name = split == 0 ? "train" : "test";
    std::map<int, int> seen;
    for (const PointCloud& c : clouds) {
      const int label = c.label.value_or(-1);
      std::ostringstream file;
      file << name << "/" << shape_name(spec.classes.at(label)) << "_" << std::setw(4)
           << std::setfill('0') << seen[label]++ << ".a2pc";
      write_point_cloud(dir / file.str(), c);
      index[name].push_back({{"file", file.str()}, {"label", label}});
    }
  }
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << "\n";
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw IoError("cannot open " + (dir / "index.json").string());
  json index;
  try {
    in >> index;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed index.json: ") + e.what());
  }
  Dataset d;
  for (const char* split : {"train", "test"}) {
    auto& out = std::string(split) == "train" ? d.train : d.test;
    for (const auto& e : index.value(split, json::array())) {
      PointCloud c = read_point_cloud(dir / e.at("file").get<std::string>());
      c.label = e.at("label").get<int>();
      out.push_back(std::move(c));
    }
  }
  return d;
}

// ---- optimization ----------------------------------------------------------

double cosine_lr(int epoch, int total_epochs, double lr0) {
  const double pi = std::acos(-1.0);
  return lr0 * 0.5 * (1.0 + std::cos(pi * epoch / static_cast<double>(total_epochs)));
}

void AdamW::step(ad::ParamStore& params, const ad::GradMap& grads, double lr) {
  if (m_.empty()) {
    for (int i = 0; i < params.size(); ++i) {
      m_.push_back(Mat::Zero(params.value(i).rows(), params.value(i).cols()));
      v_.push_back(Mat::Zero(params.value(i).rows(), params.value(i).cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, t_);
  const double bc2 = 1.0 - std::pow(b2_, t_);
  for (int i = 0; i < params.size(); ++i) {
    Mat& p = params.value(i);
    if (i < grads.size() && grads.has(i)) {
      const Mat& g = grads.at(i);
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    } else {
      m_[i] *= b1_;
      v_[i] *= b2_;
    }
    p *= 1.0 - lr * wd_;
    p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

// ---- configuration ---------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  augmentation.validate();
  model.validate();
  backbone.validate();
  if (data_dir.empty()) {
    data.validate();
    if (static_cast<int>(data.classes.size()) != model.num_classes) {
      throw ConfigError("num_classes (" + std::to_string(model.num_classes) +
                        ") differs from the dataset's class count (" +
                        std::to_string(data.classes.size()) + ")");
    }
    if (data.n_points != model.tokenizer.points_in) {
      throw ConfigError("n_points differs from the tokenizer's points_in");
    }
  }
}

namespace {

std::string variant_key(const TrainConfig& c) {
  if (!c.model.use_adapters) return "none";
  return c.model.adapter.variant == AdapterVariant::kFull ? "guided" : "mlp_baseline";
}

}  // namespace

json to_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  const AdapterConfig& a = m.adapter;
  json classes = json::array();
  for (ShapeKind k : c.data.classes) classes.push_back(shape_name(k));
  return {
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"threads", c.threads},
      {"eval_every", c.eval_every},
      {"augment", c.augment},
      {"augment_scale_lo", c.augmentation.scale_lo},
      {"augment_scale_hi", c.augmentation.scale_hi},
      {"augment_translation", c.augmentation.translation},
      {"augment_rotation", c.augmentation.rotation},
      {"projection", mode_name(m.projection.mode)},
      {"m_views", m.projection.m_views},
      {"plane_size", m.projection.plane_width},
      {"patch_size", m.projection.patch_size},
      {"elevation", m.projection.elevation_deg},
      {"line_length", m.projection.line_length},
      {"adapter", variant_key(c)},
      {"agg_patch_size", a.patch_size},
      {"line_size", a.segment_size},
      {"grid_size", a.grid_size_3d},
      {"adapter_hidden", a.hidden_dim},
      {"bottleneck_dim", a.bottleneck_dim},
      {"ensemble", a.ensemble == EnsembleMode::kAdaptive ? "adaptive" : "mean"},
      {"guidance", a.guidance == GuidanceMode::kProjected ? "projected" : "voxel3d"},
      {"pool", a.pool == PoolMode::kMean ? "mean" : "max"},
      {"tau", a.tau},
      {"detach_baseline", a.detach_baseline},
      {"insertion_depth", m.insertion_depth},
      {"adapter_position", position_name(m.adapter_position)},
      {"pe_mode", pe_mode_name(m.pe_mode)},
      {"readout", m.readout == Readout::kCls ? "cls" : "mean"},
      {"num_classes", m.num_classes},
      {"train_tokenizer", m.train_tokenizer},
      {"learnable_pe_hidden", m.learnable_pe_hidden},
      {"init_seed", m.init_seed},
      {"points_in", m.tokenizer.points_in},
      {"tokens_out", m.tokenizer.tokens_out},
      {"k_neighbors", m.tokenizer.k_neighbors},
      {"tokenizer_dims", m.tokenizer.dims},
      {"n_blocks", c.backbone.n_blocks},
      {"dim", c.backbone.dim},
      {"n_heads", c.backbone.n_heads},
      {"ffn_ratio", c.backbone.ffn_ratio},
      {"backbone_seed", c.backbone_seed},
      {"backbone", c.backbone_path},
      {"classes", classes},
      {"train_per_class", c.data.train_per_class},
      {"test_per_class", c.data.test_per_class},
      {"n_points", c.data.n_points},
      {"jitter", c.data.jitter},
      {"random_pose", c.data.random_pose},
      {"stretch", c.data.stretch},
      {"data_seed", c.data.seed},
      {"data", c.data_dir},
  };
}

void apply_json(TrainConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ModelConfig& m = c.model;
  AdapterConfig& a = m.adapter;
  using Setter = std::function<void(const json&)>;
  auto str = [](const json& v) { return v.get<std::string>(); };
  const std::map<std::string, Setter> setters = {
      {"lr", [&](const json& v) { c.lr = v.get<double>(); }},
      {"weight_decay", [&](const json& v) { c.weight_decay = v.get<double>(); }},
      {"epochs", [&](const json& v) { c.epochs = v.get<int>(); }},
      {"batch_size", [&](const json& v) { c.batch_size = v.get<int>(); }},
      {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"threads", [&](const json& v) { c.threads = v.get<int>(); }},
      {"eval_every", [&](const json& v) { c.eval_every = v.get<int>(); }},
      {"augment", [&](const json& v) { c.augment = v.get<bool>(); }},
      {"augment_scale_lo", [&](const json& v) { c.augmentation.scale_lo = v.get<double>(); }},
      {"augment_scale_hi", [&](const json& v) { c.augmentation.scale_hi = v.get<double>(); }},
      {"augment_translation", [&](const json& v) { c.augmentation.translation = v.get<double>(); }},
      {"augment_rotation", [&](const json& v) { c.augmentation.rotation = v.get<bool>(); }},
      {"projection", [&](const json& v) { m.projection.mode = parse_projection_mode(str(v)); }},
      {"m_views", [&](const json& v) { m.projection.m_views = v.get<int>(); }},
      {"plane_size",
       [&](const json& v) { m.projection.plane_width = m.projection.plane_height = v.get<int>(); }},
      {"patch_size", [&](const json& v) { m.projection.patch_size = v.get<int>(); }},
      {"elevation", [&](const json& v) { m.projection.elevation_deg = v.get<double>(); }},
      {"line_length", [&](const json& v) { m.projection.line_length = v.get<int>(); }},
      {"adapter",
       [&](const json& v) {
         const std::string s = str(v);
         if (s == "none") {
           m.use_adapters = false;
         } else if (s == "guided") {
           m.use_adapters = true;
           a.variant = AdapterVariant::kFull;
         } else if (s == "mlp_baseline") {
           m.use_adapters = true;
           a.variant = AdapterVariant::kMlpBaseline;
         } else {
           throw ConfigError("adapter must be guided, mlp_baseline or none");
         }
       }},
      {"agg_patch_size", [&](const json& v) { a.patch_size = v.get<int>(); }},
      {"line_size",
       [&](const json& v) { a.segment_size = m.projection.segment_size = v.get<int>(); }},
      {"grid_size", [&](const json& v) { a.grid_size_3d = v.get<double>(); }},
      {"adapter_hidden", [&](const json& v) { a.hidden_dim = v.get<int>(); }},
      {"bottleneck_dim", [&](const json& v) { a.bottleneck_dim = v.get<int>(); }},
      {"ensemble",
       [&](const json& v) {
         const std::string s = str(v);
         if (s != "adaptive" && s != "mean") throw ConfigError("ensemble must be adaptive or mean");
         a.ensemble = s == "adaptive" ? EnsembleMode::kAdaptive : EnsembleMode::kMean;
       }},
      {"guidance",
       [&](const json& v) {
         const std::string s = str(v);
         if (s != "projected" && s != "voxel3d") {
           throw ConfigError("guidance must be projected or voxel3d");
         }
         a.guidance = s == "projected" ? GuidanceMode::kProjected : GuidanceMode::kVoxel3D;
       }},
      {"pool",
       [&](const json& v) {
         const std::string s = str(v);
         if (s != "mean" && s != "max") throw ConfigError("pool must be mean or max");
         a.pool = s == "mean" ? PoolMode::kMean : PoolMode::kMax;
       }},
      {"tau", [&](const json& v) { a.tau = v.get<double>(); }},
      {"detach_baseline", [&](const json& v) { a.detach_baseline = v.get<bool>(); }},
      {"insertion_depth", [&](const json& v) { m.insertion_depth = v.get<int>(); }},
      {"adapter_position",
       [&](const json& v) { m.adapter_position = parse_adapter_position(str(v)); }},
      {"pe_mode", [&](const json& v) { m.pe_mode = parse_pe_mode(str(v)); }},
      {"readout",
       [&](const json& v) {
         const std::string s = str(v);
         if (s != "cls" && s != "mean") throw ConfigError("readout must be cls or mean");
         m.readout = s == "cls" ? Readout::kCls : Readout::kMean;
       }},
      {"num_classes", [&](const json& v) { m.num_classes = v.get<int>(); }},
      {"train_tokenizer", [&](const json& v) { m.train_tokenizer = v.get<bool>(); }},
      {"learnable_pe_hidden", [&](const json& v) { m.learnable_pe_hidden = v.get<int>(); }},
      {"init_seed", [&](const json& v) { m.init_seed = v.get<std::uint64_t>(); }},
      {"points_in", [&](const json& v) { m.tokenizer.points_in = v.get<int>(); }},
      {"tokens_out", [&](const json& v) { m.tokenizer.tokens_out = v.get<int>(); }},
      {"k_neighbors", [&](const json& v) { m.tokenizer.k_neighbors = v.get<int>(); }},
      {"tokenizer_dims", [&](const json& v) { m.tokenizer.dims = v.get<std::vector<int>>(); }},
      {"n_blocks", [&](const json& v) { c.backbone.n_blocks = v.get<int>(); }},
      {"dim", [&](const json& v) { c.backbone.dim = v.get<int>(); }},
      {"n_heads", [&](const json& v) { c.backbone.n_heads = v.get<int>(); }},
      {"ffn_ratio", [&](const json& v) { c.backbone.ffn_ratio = v.get<double>(); }},
      {"backbone_seed", [&](const json& v) { c.backbone_seed = v.get<std::uint64_t>(); }},
      {"backbone", [&](const json& v) { c.backbone_path = str(v); }},
      {"classes",
       [&](const json& v) {
         c.data.classes.clear();
         for (const auto& n : v) c.data.classes.push_back(parse_shape_kind(str(n)));
       }},
      {"train_per_class", [&](const json& v) { c.data.train_per_class = v.get<int>(); }},
      {"test_per_class", [&](const json& v) { c.data.test_per_class = v.get<int>(); }},
      {"n_points", [&](const json& v) { c.data.n_points = v.get<int>(); }},
      {"jitter", [&](const json& v) { c.data.jitter = v.get<double>(); }},
      {"random_pose", [&](const json& v) { c.data.random_pose = v.get<bool>(); }},
      {"stretch", [&](const json& v) { c.data.stretch = v.get<double>(); }},
      {"data_seed", [&](const json& v) { c.data.seed = v.get<std::uint64_t>(); }},
      {"data", [&](const json& v) { c.data_dir = str(v); }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + key + "': " + e.what());
    }
  }
  // keep the tokenizer's last width tied to the backbone width
  if (j.contains("dim") && !j.contains("tokenizer_dims") && !m.tokenizer.dims.empty()) {
    m.tokenizer.dims.back() = c.backbone.dim;
  }
  if (j.contains("classes") && !j.contains("num_classes")) {
    m.num_classes = static_cast<int>(c.data.classes.size());
  }
  if (j.contains("n_points") && !j.contains("points_in")) m.tokenizer.points_in = c.data.n_points;
  // a 1D line favours the finer voxel grid unless one was given
  if (j.contains("projection") && !j.contains("grid_size")) {
    a.grid_size_3d = m.projection.mode == ProjectionMode::kLine1D ? 0.08 : 0.16;
  }
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  TrainConfig c;
  apply_json(c, j);
  return c;
}

BackboneConfig backbone_config_for(const TrainConfig& cfg) {
  BackboneConfig b = cfg.backbone;
  const ProjectionConfig& p = cfg.model.projection;
  b.pe_layout = p.mode;
  if (p.mode == ProjectionMode::kLine1D) {
    b.modality = Modality::kLanguage;
    b.pe_rows = p.line_length;
    b.pe_cols = 1;
  } else {
    b.modality = Modality::kVision;
    b.pe_rows = p.grid_rows();
    b.pe_cols = p.grid_cols();
  }
  return b;
}

BackboneBundle make_backbone(const TrainConfig& cfg) {
  if (!cfg.backbone_path.empty()) return load_checkpoint(cfg.backbone_path);
  return init_random_backbone(backbone_config_for(cfg), cfg.backbone_seed);
}

Dataset load_dataset(const TrainConfig& cfg) {
  if (!cfg.data_dir.empty()) return read_dataset(cfg.data_dir);
  return make_shape_dataset(cfg.data);
}

TrainConfig head_only(TrainConfig cfg) {
  cfg.model.use_adapters = false;
  cfg.model.pe_mode = PEMode::kNone;
  cfg.model.train_tokenizer = false;
  return cfg;
}

// ---- training --------------------------------------------------------------

double batch_gradient(const Model& model, const std::vector<PreparedSample>& batch, int threads,
                      ad::GradMap& grads) {
  const int n = static_cast<int>(batch.size());
  const int w = std::max(1, std::min(threads, n));
  std::vector<ad::GradMap> partial(w, ad::GradMap(model.params()));
  std::vector<double> losses(w, 0.0);
  parallel_for(n, w, [&](int k, int lo, int hi) {
    if (lo == hi) return;
    std::vector<PreparedSample> chunk(batch.begin() + lo, batch.begin() + hi);
    const double share = static_cast<double>(hi - lo) / n;
    losses[k] = model.loss(chunk, &partial[k]) * share;
    partial[k].scale(share);
  });
  grads = ad::GradMap(model.params());
  double total = 0.0;
  for (int k = 0; k < w; ++k) {
    grads.add(partial[k]);
    total += losses[k];
  }
  return total;
}

double evaluate(const Model& model, const std::vector<PointCloud>& data, int threads) {
  if (data.empty()) throw ConfigError("evaluation set is empty");
  std::vector<int> correct(data.size(), 0);
  parallel_for(static_cast<int>(data.size()), threads, [&](int, int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const PreparedSample s = model.prepare(data[i]);
      correct[i] = model.predict(s) == s.label ? 1 : 0;
    }
  });
  return std::accumulate(correct.begin(), correct.end(), 0) / static_cast<double>(data.size());
}

TrainResult train(Model& model, const std::vector<PointCloud>& train_set,
                  const std::vector<PointCloud>* test_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (!(cfg.lr > 0.0) || cfg.epochs < 1 || cfg.batch_size < 1 || cfg.threads < 1) {
    throw ConfigError("invalid optimization settings");
  }
  using clock = std::chrono::steady_clock;
  TrainResult result;
  AdamW opt(cfg.weight_decay);
  const int n = static_cast<int>(train_set.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = clock::now();
    const double lr = cosine_lr(e, cfg.epochs, cfg.lr);
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, e, 0x5eed));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      std::vector<PreparedSample> batch(stop - start);
      parallel_for(stop - start, cfg.threads, [&](int, int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
          const int idx = order[start + i];
          if (cfg.augment) {
            std::mt19937_64 rng(mix_seed(cfg.seed, e + 1, idx));
            batch[i] = model.prepare(augment(train_set[idx], cfg.augmentation, rng));
          } else {
            batch[i] = model.prepare(train_set[idx]);
          }
        }
      });
      ad::GradMap grads;
      loss_sum += batch_gradient(model, batch, cfg.threads, grads);
      opt.step(model.params(), grads, lr);
      ++batches;
    }

    EpochMetrics m;
    m.epoch = e;
    m.loss = loss_sum / batches;
    m.lr = lr;
    const bool last = e + 1 == cfg.epochs;
    const bool due = cfg.eval_every > 0 && (e + 1) % cfg.eval_every == 0;
    if (test_set && !test_set->empty() && (due || last)) {
      m.acc = evaluate(model, *test_set, cfg.threads);
      if (last) result.final_acc = m.acc;
    }
    m.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    result.history.push_back(m);
  }
  result.report = model.param_report();
  return result;
}

void write_metrics_csv(const fs::path& path, const std::vector<EpochMetrics>& h) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss,acc,lr\n" << std::setprecision(17);
  for (const EpochMetrics& m : h) {
    out << m.epoch << "," << m.loss << ",";
    if (m.acc >= 0.0) out << m.acc;
    out << "," << m.lr << "\n";
  }
}

}  // namespace a2p
