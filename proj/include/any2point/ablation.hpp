#pragma once

// Ablation sweeps on the procedural benchmark. Each table mirrors one of the
// component / hyper-parameter studies: toggle columns followed by a 1D and a
// 2D accuracy column, "-" where a cell does not apply and "error" where its
// run failed.

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "any2point/training.hpp"

namespace a2p {

struct AblationTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// main, vp, adapter, depth, view, size, agg.
const std::vector<std::string>& ablation_table_names();

/// Trains every cell of `table` from `base` with shared seeds. Progress lines
/// go to `log` when set.
AblationTable run_ablation(const std::string& table, const TrainConfig& base, const Dataset& data,
                           std::ostream* log = nullptr);

void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table);

}  // namespace a2p
