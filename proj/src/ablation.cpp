#include "any2point/ablation.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

#include "any2point/error.hpp"

namespace a2p {

namespace {

using Tweak = std::function<void(TrainConfig&)>;

struct Row {
  std::vector<std::string> toggles;
  std::optional<Tweak> line;   // 1D cell, absent renders "-"
  std::optional<Tweak> plane;  // 2D cell
  bool params_column = false;
};

std::string yes(bool b) { return b ? "yes" : "no"; }

std::string fmt(double v, const char* f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

TrainConfig for_mode(const TrainConfig& base, ProjectionMode mode) {
  TrainConfig c = base;
  c.model.projection.mode = mode;
  c.model.adapter.grid_size_3d = mode == ProjectionMode::kLine1D ? 0.08 : 0.16;
  return c;
}

std::vector<Row> define(const std::string& table, const TrainConfig& base,
                        std::vector<std::string>& header) {
  std::vector<Row> rows;
  auto both = [&](std::vector<std::string> toggles, Tweak t, bool params = false) {
    rows.push_back({std::move(toggles), t, t, params});
  };
  if (table == "main") {
    header = {"vp", "ga", "params", "acc_1d", "acc_2d"};
    for (const auto& [vp, ga] : std::vector<std::pair<bool, bool>>{
             {false, false}, {true, false}, {false, true}, {true, true}}) {
      both({yes(vp), yes(ga)},
           [vp, ga](TrainConfig& c) {
             c.model.pe_mode = vp ? PEMode::kVirtualProjection : PEMode::kNone;
             c.model.use_adapters = ga;
           },
           true);
    }
  } else if (table == "vp") {
    header = {"sinusoidal", "learnable", "vp", "acc_1d", "acc_2d"};
    for (PEMode m : {PEMode::kNone, PEMode::kSinusoidal3D, PEMode::kLearnable3D,
                     PEMode::kVirtualProjection}) {
      both({yes(m == PEMode::kSinusoidal3D), yes(m == PEMode::kLearnable3D),
            yes(m == PEMode::kVirtualProjection)},
           [m](TrainConfig& c) { c.model.pe_mode = m; });
    }
  } else if (table == "adapter") {
    header = {"local_aggregation", "adaptive_ensemble", "params", "acc_1d", "acc_2d"};
    both({"no", "no"},
         [](TrainConfig& c) { c.model.adapter.variant = AdapterVariant::kMlpBaseline; }, true);
    both({"yes", "no"},
         [](TrainConfig& c) {
           c.model.adapter.variant = AdapterVariant::kFull;
           c.model.adapter.ensemble = EnsembleMode::kMean;
         },
         true);
    both({"yes", "yes"},
         [](TrainConfig& c) {
           c.model.adapter.variant = AdapterVariant::kFull;
           c.model.adapter.ensemble = EnsembleMode::kAdaptive;
         },
         true);
  } else if (table == "depth") {
    header = {"after", "before", "parallel", "depth", "acc_1d", "acc_2d"};
    const int n = base.backbone.n_blocks;
    for (AdapterPosition p :
         {AdapterPosition::kAfter, AdapterPosition::kBefore, AdapterPosition::kParallel}) {
      for (int q = 1; q <= 4; ++q) {
        const int depth = std::max(1, (n * q + 2) / 4);
        both({yes(p == AdapterPosition::kAfter), yes(p == AdapterPosition::kBefore),
              yes(p == AdapterPosition::kParallel), std::to_string(depth)},
             [p, depth](TrainConfig& c) {
               c.model.adapter_position = p;
               c.model.insertion_depth = depth;
             });
      }
    }
  } else if (table == "view") {
    header = {"views", "acc_1d", "acc_2d"};
    for (int m : {4, 6, 8}) {
      both({std::to_string(m)}, [m](TrainConfig& c) { c.model.projection.m_views = m; });
    }
  } else if (table == "size") {
    header = {"patch_size", "line_size", "grid_size", "acc_1d", "acc_2d"};
    for (double g : {0.08, 0.16}) {
      for (int p : {16, 26, 34}) {
        rows.push_back({{std::to_string(p), "-", fmt(g, "%.2f")},
                        std::nullopt,
                        [p, g](TrainConfig& c) {
                          c.model.adapter.patch_size = p;
                          c.model.adapter.grid_size_3d = g;
                        }});
      }
    }
    for (double g : {0.08, 0.16}) {
      for (int s : {1, 2, 3}) {
        rows.push_back({{"-", std::to_string(s), fmt(g, "%.2f")},
                        [s, g](TrainConfig& c) {
                          c.model.adapter.segment_size = s;
                          c.model.adapter.grid_size_3d = g;
                        },
                        std::nullopt});
      }
    }
  } else if (table == "agg") {
    header = {"guided_3d", "guided_2d", "guided_1d", "acc_1d", "acc_2d"};
    const Tweak voxel = [](TrainConfig& c) { c.model.adapter.guidance = GuidanceMode::kVoxel3D; };
    const Tweak projected = [](TrainConfig& c) {
      c.model.adapter.guidance = GuidanceMode::kProjected;
    };
    rows.push_back({{"yes", "no", "no"}, std::nullopt, voxel});
    rows.push_back({{"no", "yes", "no"}, std::nullopt, projected});
    rows.push_back({{"yes", "no", "no"}, voxel, std::nullopt});
    rows.push_back({{"no", "no", "yes"}, projected, std::nullopt});
  } else {
    throw ConfigError("unknown ablation table '" + table + "'");
  }
  return rows;
}

}  // namespace

const std::vector<std::string>& ablation_table_names() {
  static const std::vector<std::string> names = {"main", "vp",   "adapter", "depth",
                                                 "view", "size", "agg"};
  return names;
}

AblationTable run_ablation(const std::string& table, const TrainConfig& base, const Dataset& data,
                           std::ostream* log) {
  AblationTable out;
  out.name = table;
  const std::vector<Row> rows = define(table, base, out.header);
  std::map<int, BackboneBundle> backbones;  // keyed by projection mode

  auto run_cell = [&](const Tweak& tweak, ProjectionMode mode, long long* params) {
    TrainConfig c = for_mode(base, mode);
    tweak(c);
    try {
      c.validate();
      auto it = backbones.find(static_cast<int>(mode));
      if (it == backbones.end()) {
        it = backbones.emplace(static_cast<int>(mode), make_backbone(c)).first;
      }
      Model model(c.model, it->second);
      if (params) *params = model.param_report().trainable;
      TrainConfig quiet = c;
      quiet.eval_every = 0;
      const TrainResult r = train(model, data.train, &data.test, quiet);
      return fmt(r.final_acc, "%.4f");
    } catch (const Error& e) {
      if (log) *log << "  cell failed: " << e.what() << "\n";
      return std::string("error");
    }
  };

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Row& row = rows[r];
    std::vector<std::string> cells = row.toggles;
    long long params = -1;
    const std::string acc1 =
        row.line ? run_cell(*row.line, ProjectionMode::kLine1D, nullptr) : "-";
    const std::string acc2 =
        row.plane ? run_cell(*row.plane, ProjectionMode::kPlane2D, &params) : "-";
    if (row.params_column) cells.push_back(params >= 0 ? std::to_string(params) : "error");
    cells.push_back(acc1);
    cells.push_back(acc2);
    if (log) {
      *log << table << " row " << r + 1 << "/" << rows.size() << ":";
      for (const auto& c : cells) *log << " " << c;
      *log << "\n";
    }
    out.rows.push_back(std::move(cells));
  }
  return out;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    out << (i ? "," : "") << table.header[i];
  }
  out << "\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

}  // namespace a2p
