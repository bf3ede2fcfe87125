#include "any2point/tokenizer.hpp"

#include <cmath>
#include <string>

#include "any2point/error.hpp"

namespace a2p {

namespace {

std::string encode_name(int s) { return "tokenizer.s" + std::to_string(s) + ".encode"; }
std::string project_name(int s) { return "tokenizer.s" + std::to_string(s) + ".project"; }

// Encoder width of stage s: the previous stage width, except the first stage
// whose input is bare xyz.
int encode_width(const TokenizerConfig& cfg, int s) {
  return s == 0 ? cfg.dims[0] : cfg.dims[s - 1];
}

int input_width(const TokenizerConfig& cfg, int s) { return s == 0 ? 3 : cfg.dims[s - 1]; }

}  // namespace

void TokenizerConfig::validate() const {
  if (k_neighbors < 1) throw ConfigError("tokenizer k_neighbors must be >= 1");
  if (points_in < 1 || tokens_out < 1) throw ConfigError("tokenizer point counts must be >= 1");
  long long expected = points_in;
  for (int s = 0; s < stages(); ++s) {
    if (expected % 2 != 0) throw ConfigError("tokenizer points_in must halve evenly per stage");
    expected /= 2;
  }
  if (expected != tokens_out) {
    throw ConfigError("tokenizer: " + std::to_string(points_in) + " points halved " +
                      std::to_string(stages()) + " times gives " + std::to_string(expected) +
                      ", not tokens_out=" + std::to_string(tokens_out));
  }
  for (int s = 0; s < stages(); ++s) {
    if (dims[s] < 1) throw ConfigError("tokenizer widths must be positive");
    if (s > 0 && dims[s] <= dims[s - 1]) {
      throw ConfigError("tokenizer widths must be strictly increasing");
    }
  }
  // the last stage searches neighbors among the smallest level
  if (stages() > 0 && k_neighbors > tokens_out * 2) {
    throw ConfigError("tokenizer k_neighbors exceeds the last level size");
  }
}

Mat kaiming_uniform(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

void init_tokenizer_params(ad::ParamStore& store, const TokenizerConfig& cfg,
                           std::mt19937_64& rng) {
  cfg.validate();
  for (int s = 0; s < cfg.stages(); ++s) {
    const int in = input_width(cfg, s);
    const int enc = encode_width(cfg, s);
    store.add(encode_name(s), kaiming_uniform(3 + in, enc, rng));
    store.add(project_name(s), kaiming_uniform(2 * enc + in, cfg.dims[s], rng));
  }
}

long long tokenizer_param_count(const TokenizerConfig& cfg) {
  long long n = 0;
  for (int s = 0; s < cfg.stages(); ++s) {
    const long long in = input_width(cfg, s);
    const long long enc = encode_width(cfg, s);
    n += (3 + in) * enc + (2 * enc + in) * cfg.dims[s];
  }
  return n;
}

TokenizerPlan plan_tokenizer(const Coords& points, const TokenizerConfig& cfg) {
  if (points.rows() != cfg.points_in) {
    throw ConfigMismatch("cloud has " + std::to_string(points.rows()) +
                         " points, tokenizer expects " + std::to_string(cfg.points_in));
  }
  TokenizerPlan plan;
  plan.levels.push_back(points);
  const int k = cfg.k_neighbors;
  for (int s = 0; s < cfg.stages(); ++s) {
    const Coords& prev = plan.levels.back();
    TokenizerPlan::Stage st;
    const int m = static_cast<int>(prev.rows()) / 2;
    st.centers = fps(prev, m);
    Coords centers(m, 3);
    for (int i = 0; i < m; ++i) centers.row(i) = prev.row(st.centers[i]);
    const IndexTable nb = knn(centers, prev, k);
    st.neighbors.resize(static_cast<std::size_t>(m) * k);
    st.relative.resize(static_cast<Eigen::Index>(m) * k, 3);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < k; ++j) {
        const int idx = nb(i, j);
        st.neighbors[static_cast<std::size_t>(i) * k + j] = idx;
        st.relative.row(static_cast<Eigen::Index>(i) * k + j) = prev.row(idx) - centers.row(i);
      }
    }
    plan.stages.push_back(std::move(st));
    plan.levels.push_back(std::move(centers));
  }
  return plan;
}

ad::Var tokenize(ad::Tape& tape, const TokenizerPlan& plan, const TokenizerConfig& cfg) {
  using namespace ad;
  Var feat = tape.constant(plan.levels[0]);
  for (int s = 0; s < cfg.stages(); ++s) {
    const auto& st = plan.stages[s];
    const Var rel = tape.constant(st.relative);
    const Var nbr = gather_rows(tape, feat, st.neighbors);
    const Var enc = gelu(tape, matmul(tape, concat_cols(tape, {rel, nbr}), tape.param(encode_name(s))));
    const Var pooled = concat_cols(tape, {segment_max(tape, enc, cfg.k_neighbors),
                                          segment_mean(tape, enc, cfg.k_neighbors),
                                          gather_rows(tape, feat, st.centers)});
    feat = matmul(tape, pooled, tape.param(project_name(s)));
    if (s + 1 < cfg.stages()) feat = gelu(tape, feat);
  }
  return feat;
}

TokenSet tokenize(const PointCloud& cloud, const TokenizerConfig& cfg,
                  const ad::ParamStore& params) {
  const TokenizerPlan plan = plan_tokenizer(cloud.points, cfg);
  ad::Tape tape(&params, nullptr);
  const ad::Var f = tokenize(tape, plan, cfg);
  return TokenSet{tape.value(f), plan.levels.back()};
}

}  // namespace a2p
