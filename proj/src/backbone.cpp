#include "any2point/backbone.hpp"

#include <cmath>
#include <random>

#include "any2point/error.hpp"
#include "any2point/tokenizer.hpp"

namespace a2p {

using nlohmann::json;

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::kLanguage: return "language";
    case Modality::kVision: return "vision";
    case Modality::kAudio: return "audio";
    case Modality::kSynthetic: return "synthetic";
  }
  return "synthetic";
}

Modality parse_modality(const std::string& name) {
  if (name == "language") return Modality::kLanguage;
  if (name == "vision") return Modality::kVision;
  if (name == "audio") return Modality::kAudio;
  if (name == "synthetic") return Modality::kSynthetic;
  throw ConfigError("unknown modality '" + name + "'");
}

std::string position_name(AdapterPosition p) {
  switch (p) {
    case AdapterPosition::kAfter: return "after";
    case AdapterPosition::kBefore: return "before";
    case AdapterPosition::kParallel: return "parallel";
  }
  return "after";
}

AdapterPosition parse_adapter_position(const std::string& name) {
  if (name == "after") return AdapterPosition::kAfter;
  if (name == "before") return AdapterPosition::kBefore;
  if (name == "parallel") return AdapterPosition::kParallel;
  throw ConfigError("unknown adapter position '" + name + "'");
}

void BackboneConfig::validate() const {
  if (n_blocks < 1) throw ConfigError("backbone needs at least one block");
  if (dim < 1 || n_heads < 1 || dim % n_heads != 0) {
    throw ConfigError("backbone dim must be divisible by n_heads");
  }
  if (ffn_dim() < 1) throw ConfigError("ffn_ratio too small");
  if (pe_rows < 1 || pe_cols < 1) throw ConfigError("PE table geometry must be positive");
  if (pe_layout == ProjectionMode::kLine1D && pe_cols != 1) {
    throw ConfigError("a line PE table has exactly one column");
  }
}

json to_json(const BackboneConfig& cfg) {
  return {{"n_blocks", cfg.n_blocks},     {"dim", cfg.dim},
          {"n_heads", cfg.n_heads},       {"ffn_ratio", cfg.ffn_ratio},
          {"modality", modality_name(cfg.modality)},
          {"pe_layout", mode_name(cfg.pe_layout)},
          {"pe_rows", cfg.pe_rows},       {"pe_cols", cfg.pe_cols}};
}

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig c;
  try {
    c.n_blocks = j.at("n_blocks").get<int>();
    c.dim = j.at("dim").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.ffn_ratio = j.at("ffn_ratio").get<double>();
    c.modality = parse_modality(j.value("modality", "synthetic"));
    c.pe_layout = parse_projection_mode(j.at("pe_layout").get<std::string>());
    c.pe_rows = j.at("pe_rows").get<int>();
    c.pe_cols = j.value("pe_cols", 1);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("backbone config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ManifestError(e.what());
  }
  return c;
}

std::vector<std::pair<std::string, const Mat*>> BackboneBundle::tensors() const {
  std::vector<std::pair<std::string, const Mat*>> out;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    const BlockWeights& w = blocks[b];
    out.insert(out.end(), {{p + "ln1.g", &w.ln1_g},   {p + "ln1.b", &w.ln1_b},
                           {p + "qkv.w", &w.qkv_w},   {p + "qkv.b", &w.qkv_b},
                           {p + "proj.w", &w.proj_w}, {p + "proj.b", &w.proj_b},
                           {p + "ln2.g", &w.ln2_g},   {p + "ln2.b", &w.ln2_b},
                           {p + "fc1.w", &w.fc1_w},   {p + "fc1.b", &w.fc1_b},
                           {p + "fc2.w", &w.fc2_w},   {p + "fc2.b", &w.fc2_b}});
  }
  out.insert(out.end(), {{"norm.g", &norm_g},
                         {"norm.b", &norm_b},
                         {"cls_token", &cls_token},
                         {"pe_table", &pe.data}});
  return out;
}

long long BackboneBundle::param_count() const {
  long long n = 0;
  for (const auto& [name, m] : tensors()) n += m->size();
  return n;
}

std::string BackboneBundle::sha256() const {
  Sha256 h;
  for (const auto& [name, m] : tensors()) {
    h.update(m->data(), static_cast<std::size_t>(m->size()) * sizeof(double));
  }
  return h.hex_digest();
}

namespace {

Mat to_float32(Mat m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
  return m;
}

Mat normal(int rows, int cols, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

std::vector<std::int64_t> shape_of(const std::string& name, const Mat& m, const BackboneConfig& c) {
  if (name == "pe_table") {
    if (c.pe_layout == ProjectionMode::kPlane2D) return {c.pe_rows, c.pe_cols, m.cols()};
    return {c.pe_rows, m.cols()};
  }
  if (m.rows() == 1) return {m.cols()};
  return {m.rows(), m.cols()};
}

// Expected shape of every tensor for `c`, keyed by canonical name.
std::vector<std::int64_t> expected_shape(const std::string& name, const BackboneConfig& c) {
  const std::int64_t d = c.dim, h = c.ffn_dim();
  if (name == "pe_table") {
    if (c.pe_layout == ProjectionMode::kPlane2D) return {c.pe_rows, c.pe_cols, d};
    return {c.pe_rows, d};
  }
  if (name == "norm.g" || name == "norm.b" || name == "cls_token") return {d};
  const std::string leaf = name.substr(name.find('.', 7) + 1);
  if (leaf == "ln1.g" || leaf == "ln1.b" || leaf == "ln2.g" || leaf == "ln2.b" ||
      leaf == "proj.b" || leaf == "fc2.b") {
    return {d};
  }
  if (leaf == "qkv.w") return {d, 3 * d};
  if (leaf == "qkv.b") return {3 * d};
  if (leaf == "proj.w") return {d, d};
  if (leaf == "fc1.w") return {d, h};
  if (leaf == "fc1.b") return {h};
  if (leaf == "fc2.w") return {h, d};
  throw ManifestError("unexpected tensor '" + name + "'");
}

std::string shape_str(const std::vector<std::int64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

BackboneBundle allocate(const BackboneConfig& cfg) {
  BackboneBundle b;
  b.config = cfg;
  const int d = cfg.dim, h = cfg.ffn_dim();
  b.blocks.resize(cfg.n_blocks);
  for (auto& w : b.blocks) {
    w.ln1_g = Mat::Ones(1, d);
    w.ln1_b = Mat::Zero(1, d);
    w.qkv_w = Mat::Zero(d, 3 * d);
    w.qkv_b = Mat::Zero(1, 3 * d);
    w.proj_w = Mat::Zero(d, d);
    w.proj_b = Mat::Zero(1, d);
    w.ln2_g = Mat::Ones(1, d);
    w.ln2_b = Mat::Zero(1, d);
    w.fc1_w = Mat::Zero(d, h);
    w.fc1_b = Mat::Zero(1, h);
    w.fc2_w = Mat::Zero(h, d);
    w.fc2_b = Mat::Zero(1, d);
  }
  b.norm_g = Mat::Ones(1, d);
  b.norm_b = Mat::Zero(1, d);
  b.cls_token = Mat::Zero(1, d);
  b.pe.mode = cfg.pe_layout;
  b.pe.rows = cfg.pe_rows;
  b.pe.cols = cfg.pe_cols;
  b.pe.data = Mat::Zero(static_cast<Eigen::Index>(cfg.pe_rows) * cfg.pe_cols, d);
  return b;
}

}  // namespace

BackboneBundle init_random_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BackboneBundle b = allocate(cfg);
  std::mt19937_64 rng(seed);
  const int d = cfg.dim, h = cfg.ffn_dim();
  for (auto& w : b.blocks) {
    w.qkv_w = to_float32(kaiming_uniform(d, 3 * d, rng));
    w.qkv_b = to_float32(normal(1, 3 * d, 0.02, rng));
    w.proj_w = to_float32(kaiming_uniform(d, d, rng));
    w.proj_b = to_float32(normal(1, d, 0.02, rng));
    w.fc1_w = to_float32(kaiming_uniform(d, h, rng));
    w.fc1_b = to_float32(normal(1, h, 0.02, rng));
    w.fc2_w = to_float32(kaiming_uniform(h, d, rng));
    w.fc2_b = to_float32(normal(1, d, 0.02, rng));
  }
  b.cls_token = to_float32(normal(1, d, 1.0, rng));
  if (cfg.pe_layout == ProjectionMode::kLine1D) {
    b.pe = sinusoidal_table_1d(cfg.pe_rows, d);
  } else {
    b.pe = sinusoidal_table_2d(cfg.pe_rows, cfg.pe_cols, d);
  }
  b.pe.data = to_float32(b.pe.data);
  b.frozen = true;
  return b;
}

void save_backbone(const std::filesystem::path& dir, const BackboneBundle& bundle,
                   const json& flags) {
  Checkpoint ckpt;
  ckpt.kind = "backbone";
  ckpt.config = to_json(bundle.config);
  ckpt.flags = flags;
  for (const auto& [name, m] : bundle.tensors()) {
    ckpt.tensors.push_back({name, shape_of(name, *m, bundle.config), *m});
  }
  save_checkpoint(dir, ckpt);
}

BackboneBundle load_checkpoint(const std::filesystem::path& dir) {
  const Checkpoint ckpt = load_checkpoint_file(dir);
  if (ckpt.kind != "backbone") throw ManifestError("checkpoint kind is not 'backbone'");
  const BackboneConfig cfg = backbone_config_from_json(ckpt.config);
  BackboneBundle b = allocate(cfg);
  for (const auto& [name, slot] : b.tensors()) {
    const NamedTensor& t = ckpt.get(name);
    const auto want = expected_shape(name, cfg);
    if (t.shape != want) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_str(t.shape) + ", config implies " +
                       shape_str(want));
    }
    *const_cast<Mat*>(slot) = t.value;
  }
  b.frozen = true;
  return b;
}

BackboneOutput forward(ad::Tape& t, const BackboneBundle& bundle, ad::Var tokens_in,
                       const AdapterHook* hook, ForwardTrace* trace) {
  using namespace ad;
  const BackboneConfig& cfg = bundle.config;
  const int d = cfg.dim;
  const int n = static_cast<int>(t.value(tokens_in).rows());
  if (t.value(tokens_in).cols() != d) {
    throw DimMismatch("tokens are " + std::to_string(t.value(tokens_in).cols()) +
                      "-wide, backbone dim is " + std::to_string(d));
  }
  auto c = [&t](const Mat& m) { return t.constant_ref(m); };

  auto adapt_tokens = [&](Var x, int block) {
    Mat* wout = nullptr;
    if (trace) wout = &trace->ensemble_weights.emplace_back();
    const Var cls = slice_rows(t, x, 0, 1);
    const Var tok = slice_rows(t, x, 1, n);
    const Var adapted = adapter_forward(t, tok, *hook->context, *hook->config, block, wout);
    return concat_rows(t, {cls, adapted});
  };

  Var x = concat_rows(t, {c(bundle.cls_token), tokens_in});
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const BlockWeights& w = bundle.blocks[b];
    const bool adapted = hook && hook->config && b < hook->insertion_depth;

    const Var h = layer_norm(t, x, c(w.ln1_g), c(w.ln1_b));
    const Var qkv = linear(t, h, c(w.qkv_w), c(w.qkv_b));
    Mat* probs = nullptr;
    if (trace) probs = &trace->attention.emplace_back();
    const Var att = multi_head_attention(t, slice_cols(t, qkv, 0, d), slice_cols(t, qkv, d, d),
                                         slice_cols(t, qkv, 2 * d, d), cfg.n_heads, probs);
    x = add(t, x, linear(t, att, c(w.proj_w), c(w.proj_b)));

    if (adapted && hook->position == AdapterPosition::kBefore) x = adapt_tokens(x, b);

    const Var h2 = layer_norm(t, x, c(w.ln2_g), c(w.ln2_b));
    const Var ffn =
        linear(t, gelu(t, linear(t, h2, c(w.fc1_w), c(w.fc1_b))), c(w.fc2_w), c(w.fc2_b));

    if (adapted && hook->position == AdapterPosition::kParallel) {
      Mat* wout = nullptr;
      if (trace) wout = &trace->ensemble_weights.emplace_back();
      const Var branch = adapter_branch(t, slice_rows(t, x, 1, n), *hook->context,
                                        *hook->config, b, wout);
      const Var padded = concat_rows(t, {t.constant(Mat::Zero(1, d)), branch});
      x = add(t, add(t, x, ffn), padded);
    } else {
      x = add(t, x, ffn);
    }

    if (adapted && hook->position == AdapterPosition::kAfter) x = adapt_tokens(x, b);
  }
  const Var out = layer_norm(t, x, c(bundle.norm_g), c(bundle.norm_b));
  return BackboneOutput{slice_rows(t, out, 1, n), slice_rows(t, out, 0, 1)};
}

ForwardResult forward(const BackboneBundle& bundle, const TokenSet& tokens_in,
                      const AdapterHook* hook, const ad::ParamStore* adapter_params,
                      ForwardTrace* trace) {
  ad::Tape t(adapter_params, nullptr);
  const ad::Var in = t.constant_ref(tokens_in.features);
  const BackboneOutput out = forward(t, bundle, in, hook, trace);
  return ForwardResult{t.value(out.tokens), t.value(out.cls)};
}

std::vector<double> attention_scores(const BackboneBundle& bundle, const TokenSet& tokens_in,
                                     int block, const AdapterHook* hook,
                                     const ad::ParamStore* adapter_params) {
  if (block < 0 || block >= bundle.config.n_blocks) {
    throw ConfigError("attention block index out of range");
  }
  ForwardTrace trace;
  forward(bundle, tokens_in, hook, adapter_params, &trace);
  const Mat& p = trace.attention[block];
  std::vector<double> scores(p.cols() - 1);
  for (Eigen::Index j = 1; j < p.cols(); ++j) scores[j - 1] = p(0, j);
  return scores;
}

}  // namespace a2p
