#include "any2point/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "any2point/error.hpp"
#include "any2point/tokenizer.hpp"

namespace a2p {

void AdapterConfig::validate() const {
  if (!(grid_size_3d > 0.0)) throw ConfigError("grid_size_3d must be > 0");
  if (patch_size < 1 || segment_size < 1) throw ConfigError("grouping granularity must be >= 1");
  if (hidden_dim < 1 || bottleneck_dim < 1) throw ConfigError("adapter widths must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("ensemble temperature must be > 0");
}

Partition group_tokens(const ProjectedPositions& positions, int view, const AdapterConfig& cfg) {
  Partition out;
  if (positions.mode == ProjectionMode::kPlane2D) {
    std::map<std::pair<long, long>, std::vector<int>> buckets;
    for (int i = 0; i < positions.tokens(); ++i) {
      const long col = static_cast<long>(std::floor(positions.u(i, view) / cfg.patch_size));
      const long row = static_cast<long>(std::floor(positions.v(i, view) / cfg.patch_size));
      buckets[{row, col}].push_back(i);
    }
    for (auto& [key, members] : buckets) out.push_back(std::move(members));
  } else {
    std::map<long, std::vector<int>> buckets;
    for (int i = 0; i < positions.tokens(); ++i) {
      buckets[static_cast<long>(std::floor(positions.u(i, view) / cfg.segment_size))].push_back(i);
    }
    for (auto& [key, members] : buckets) out.push_back(std::move(members));
  }
  return out;
}

Partition voxel_groups(const Coords& coords, double grid) {
  std::map<std::tuple<long, long, long>, std::vector<int>> buckets;
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const auto key = [&](int a) {
      return static_cast<long>(std::floor((coords(i, a) + 1.0) / grid));
    };
    buckets[{key(0), key(1), key(2)}].push_back(static_cast<int>(i));
  }
  Partition out;
  for (auto& [key, members] : buckets) out.push_back(std::move(members));
  return out;
}

AdapterContext make_adapter_context(const Coords& coords, const ProjectedPositions& positions,
                                    const AdapterConfig& cfg) {
  AdapterContext ctx;
  ctx.voxel_groups = voxel_groups(coords, cfg.grid_size_3d);
  if (cfg.guidance == GuidanceMode::kVoxel3D) {
    ctx.view_groups.push_back(ctx.voxel_groups);
  } else {
    for (int j = 0; j < positions.views(); ++j) {
      ctx.view_groups.push_back(group_tokens(positions, j, cfg));
    }
  }
  return ctx;
}

Mat baseline_branch(const Coords& coords, const Mat& features, double grid) {
  ad::Tape tape;
  const ad::Var x = tape.constant(features);
  return tape.value(ad::group_mean(tape, x, voxel_groups(coords, grid)));
}

Mat ensemble_weights(const Mat& baseline, const std::vector<Mat>& views, double tau) {
  ad::Tape tape;
  std::vector<ad::Var> vs;
  for (const Mat& v : views) vs.push_back(tape.constant_ref(v));
  Mat w;
  ad::cosine_ensemble(tape, tape.constant_ref(baseline), vs, tau, &w);
  return w;
}

Mat adaptive_ensemble(const Mat& baseline, const std::vector<Mat>& views, double tau) {
  ad::Tape tape;
  std::vector<ad::Var> vs;
  for (const Mat& v : views) vs.push_back(tape.constant_ref(v));
  return tape.value(ad::cosine_ensemble(tape, tape.constant_ref(baseline), vs, tau));
}

namespace {

ad::Var pool_propagate(ad::Tape& t, ad::Var a, const Partition& p, PoolMode pool) {
  return pool == PoolMode::kMean ? ad::group_mean_propagate(t, a, p)
                                 : ad::group_max_propagate(t, a, p);
}

}  // namespace

Mat local_aggregate(const Mat& features, const Partition& partition, const AttentionWeights& w,
                    PoolMode pool) {
  using namespace ad;
  Tape t;
  const Var x = t.constant_ref(features);
  const Var q = linear(t, x, t.constant_ref(w.q_w), t.constant_ref(w.q_b));
  const Var k = linear(t, x, t.constant_ref(w.k_w), t.constant_ref(w.k_b));
  const Var v = linear(t, x, t.constant_ref(w.v_w), t.constant_ref(w.v_b));
  const Var a = grouped_attention(t, q, k, v, partition);
  const Var o = linear(t, a, t.constant_ref(w.o_w), t.constant_ref(w.o_b));
  return t.value(pool_propagate(t, o, partition, pool));
}

std::string adapter_prefix(int block) { return "adapter.b" + std::to_string(block) + "."; }

void init_adapter_params(ad::ParamStore& store, int block, int dim, const AdapterConfig& cfg,
                         std::mt19937_64& rng) {
  cfg.validate();
  const std::string p = adapter_prefix(block);
  if (cfg.variant == AdapterVariant::kMlpBaseline) {
    const int b = cfg.bottleneck_dim;
    store.add(p + "fc1_w", kaiming_uniform(dim, b, rng));
    store.add(p + "fc1_b", Mat::Zero(1, b));
    store.add(p + "fc2_w", kaiming_uniform(b, dim, rng) * 0.1);
    return;
  }
  const int r = cfg.hidden_dim;
  store.add(p + "pre_w", kaiming_uniform(dim, r, rng));
  store.add(p + "pre_b", Mat::Zero(1, r));
  for (const char* n : {"q", "k", "v", "o"}) {
    store.add(p + n + "_w", kaiming_uniform(r, r, rng));
    store.add(p + n + "_b", Mat::Zero(1, r));
  }
  // small output projection keeps the adapter near the identity at start
  store.add(p + "post_w", kaiming_uniform(r, dim, rng) * 0.1);
  store.add(p + "post_b", Mat::Zero(1, dim));
}

long long adapter_param_count(int dim, const AdapterConfig& cfg) {
  const long long d = dim;
  if (cfg.variant == AdapterVariant::kMlpBaseline) {
    const long long b = cfg.bottleneck_dim;
    return 2 * d * b + b;
  }
  const long long r = cfg.hidden_dim;
  return d * r + r + 4 * (r * r + r) + r * d + d;
}

ad::Var adapter_branch(ad::Tape& t, ad::Var x, const AdapterContext& ctx,
                       const AdapterConfig& cfg, int block, Mat* weights_out) {
  using namespace ad;
  const std::string p = adapter_prefix(block);
  if (cfg.variant == AdapterVariant::kMlpBaseline) {
    const Var h = gelu(t, linear(t, x, t.param(p + "fc1_w"), t.param(p + "fc1_b")));
    return matmul(t, h, t.param(p + "fc2_w"));
  }
  const Var y = linear(t, x, t.param(p + "pre_w"), t.param(p + "pre_b"));
  const Var q = linear(t, y, t.param(p + "q_w"), t.param(p + "q_b"));
  const Var k = linear(t, y, t.param(p + "k_w"), t.param(p + "k_b"));
  const Var v = linear(t, y, t.param(p + "v_w"), t.param(p + "v_b"));
  const Var o_w = t.param(p + "o_w"), o_b = t.param(p + "o_b");
  const Var post_w = t.param(p + "post_w"), post_b = t.param(p + "post_b");

  std::vector<Var> views;
  for (const Partition& part : ctx.view_groups) {
    const Var a = grouped_attention(t, q, k, v, part);
    const Var o = linear(t, a, o_w, o_b);
    views.push_back(linear(t, pool_propagate(t, o, part, cfg.pool), post_w, post_b));
  }
  if (cfg.ensemble == EnsembleMode::kMean) {
    Var acc = views[0];
    for (std::size_t j = 1; j < views.size(); ++j) acc = add(t, acc, views[j]);
    return scale(t, acc, 1.0 / static_cast<double>(views.size()));
  }
  Var base = group_mean(t, x, ctx.voxel_groups);
  if (cfg.detach_baseline) base = t.constant(t.value(base));
  return cosine_ensemble(t, base, views, cfg.tau, weights_out);
}

ad::Var adapter_forward(ad::Tape& t, ad::Var x, const AdapterContext& ctx,
                        const AdapterConfig& cfg, int block, Mat* weights_out) {
  return ad::add(t, x, adapter_branch(t, x, ctx, cfg, block, weights_out));
}

Mat adapter_forward(const Mat& features, const AdapterContext& ctx, const AdapterConfig& cfg,
                    const ad::ParamStore& params, int block) {
  ad::Tape t(&params, nullptr);
  const ad::Var x = t.constant_ref(features);
  return t.value(adapter_forward(t, x, ctx, cfg, block));
}

std::vector<int> kmeans_1d(const std::vector<double>& values, int k) {
  if (k < 1) throw ConfigError("k_clusters must be >= 1");
  const int n = static_cast<int>(values.size());
  if (n == 0) return {};
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return values[a] < values[b]; });
  std::vector<double> x(n), s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    x[i] = values[order[i]];
    s1[i + 1] = s1[i] + x[i];
    s2[i + 1] = s2[i] + x[i] * x[i];
  }
  // within-cluster sum of squares of sorted x[a..b)
  auto cost = [&](int a, int b) {
    const double m = b - a;
    const double s = s1[b] - s1[a];
    return std::max(0.0, (s2[b] - s2[a]) - s * s / m);
  };
  // Exact DP over contiguous segments of the sorted values, allowing fewer than
  // k nonempty clusters; on ties the smaller cluster count wins.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(k + 1, std::vector<double>(n + 1, inf));
  std::vector<std::vector<int>> cut(k + 1, std::vector<int>(n + 1, -1));
  best[0][0] = 0.0;
  for (int c = 1; c <= k; ++c) {
    best[c][0] = 0.0;
    for (int i = 1; i <= n; ++i) {
      best[c][i] = best[c - 1][i];
      cut[c][i] = -1;  // -1: cluster c unused
      for (int j = c - 1; j < i; ++j) {
        if (best[c - 1][j] == inf) continue;
        const double v = best[c - 1][j] + cost(j, i);
        if (best[c][i] == inf || v < best[c][i] - 1e-15 * std::max(1.0, best[c][i])) {
          best[c][i] = v;
          cut[c][i] = j;
        }
      }
    }
  }
  std::vector<std::pair<int, int>> segments;  // [a, b) in sorted order
  int i = n;
  for (int c = k; c >= 1 && i > 0; --c) {
    if (cut[c][i] < 0) continue;
    segments.emplace_back(cut[c][i], i);
    i = cut[c][i];
  }
  std::reverse(segments.begin(), segments.end());
  std::vector<int> labels(n, 0);
  for (std::size_t c = 0; c < segments.size(); ++c) {
    for (int a = segments[c].first; a < segments[c].second; ++a) {
      labels[order[a]] = static_cast<int>(c);
    }
  }
  return labels;
}

std::vector<int> similarity_dump(const RowVec& cls, const Mat& tokens, int k_clusters,
                                 std::vector<double>* similarities) {
  std::vector<double> sim(tokens.rows());
  const double cn = cls.norm();
  for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
    const double tn = tokens.row(i).norm();
    sim[i] = (cn < 1e-12 || tn < 1e-12) ? 0.0 : cls.dot(tokens.row(i)) / (cn * tn);
  }
  if (similarities) *similarities = sim;
  return kmeans_1d(sim, k_clusters);
}

}  // namespace a2p
