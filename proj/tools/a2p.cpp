// a2p: dataset generation, training, evaluation, ablation sweeps, inspection
// dumps and parameter reports for the Any2Point pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "any2point/ablation.hpp"
#include "any2point/adapter.hpp"
#include "any2point/error.hpp"
#include "any2point/io.hpp"
#include "any2point/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace a2p;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage: return 2;
    case ErrorKind::kConfig: return 3;
    case ErrorKind::kIo: return 4;
    case ErrorKind::kNumeric: return 5;
  }
  return 1;
}

struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorKind::kUsage, "usage: " + w) {}
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Converts a flag string to the JSON type of the key's default value.
json convert(const std::string& key, const std::string& text, const json& like) {
  try {
    std::size_t used = 0;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw UsageError("--" + key + " expects true or false");
    }
    if (like.is_number_unsigned()) {
      const auto v = std::stoull(text, &used);
      if (used == text.size()) return v;
    } else if (like.is_number_integer()) {
      const auto v = std::stoll(text, &used);
      if (used == text.size()) return v;
    } else if (like.is_number_float()) {
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else if (like.is_string()) {
      return text;
    } else if (like.is_array()) {
      json arr = json::array();
      const bool strings = !like.empty() && like.front().is_string();
      for (const auto& item : split_commas(text)) {
        if (strings) {
          arr.push_back(item);
        } else {
          arr.push_back(std::stoll(item, &used));
          if (used != item.size()) throw std::invalid_argument(item);
        }
      }
      return arr;
    }
  } catch (const std::logic_error&) {
  }
  throw UsageError("cannot parse --" + key + " value '" + text + "'");
}

// Registers one --key flag per TrainConfig key.
class Overrides {
 public:
  void attach(CLI::App* app) {
    defaults_ = to_json(TrainConfig{});
    for (const auto& [key, value] : defaults_.items()) {
      std::string shown = value.dump();
      app->add_option("--" + key, values_[key], "default " + shown);
    }
  }

  json collect() const {
    json out = json::object();
    for (const auto& [key, text] : values_) {
      if (!text.empty()) out[key] = convert(key, text, defaults_.at(key));
    }
    return out;
  }

 private:
  json defaults_;
  std::map<std::string, std::string> values_;
};

TrainConfig resolve_config(const std::string& path, const Overrides& o) {
  TrainConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("malformed config " + path + ": " + e.what());
    }
    apply_json(c, j);
  }
  apply_json(c, o.collect());
  c.validate();
  return c;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void print_params(const ParamReport& r) {
  std::printf("trainable=%lld total=%lld ratio=%.6f\n", r.trainable, r.total, r.ratio);
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Any2Point desk-scale pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a procedural shape dataset");
  std::string gen_spec, gen_out, gen_classes;
  std::optional<int> gen_train, gen_test, gen_points;
  std::optional<double> gen_jitter;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec, "dataset spec JSON");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", gen_classes, "comma-separated shape names");
  gen->add_option("--train_per_class", gen_train);
  gen->add_option("--test_per_class", gen_test);
  gen->add_option("--n_points", gen_points);
  gen->add_option("--jitter", gen_jitter);
  gen->add_option("--seed", gen_seed);

  // commands driven by a run config
  std::map<std::string, Overrides> overrides;
  std::map<std::string, std::string> config_paths;
  auto with_config = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_paths[name], "run config JSON");
    overrides[name].attach(sub);
    return sub;
  };

  auto* train_cmd = with_config("train", "train trainables and write metrics + checkpoint");
  std::string train_out = "run";
  train_cmd->add_option("--out", train_out, "output directory");

  auto* eval_cmd = with_config("eval", "evaluate a trained checkpoint on the test split");
  std::string eval_ckpt;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "trainables checkpoint directory")->required();

  auto* ablate_cmd = with_config("ablate", "run an ablation sweep");
  std::string ablate_table = "all", ablate_out = "ablation";
  ablate_cmd->add_option("--table", ablate_table, "main|vp|adapter|depth|view|size|agg|all");
  ablate_cmd->add_option("--out", ablate_out, "output directory");

  auto* params_cmd = with_config("params", "print the trainable parameter report");

  auto* inspect_cmd = with_config("inspect", "dump attention and similarity CSVs for one cloud");
  std::string inspect_input, inspect_ckpt, inspect_out = "inspect";
  int inspect_block = -1, inspect_clusters = 3;
  inspect_cmd->add_option("--input", inspect_input, "A2PC point cloud")->required();
  inspect_cmd->add_option("--checkpoint", inspect_ckpt, "trainables checkpoint directory");
  inspect_cmd->add_option("--out", inspect_out, "output directory");
  inspect_cmd->add_option("--block", inspect_block, "attention block, -1 for the last");
  inspect_cmd->add_option("--clusters", inspect_clusters, "k-means clusters over similarity");

  auto* export_cmd = with_config("export-pe", "write the backbone PE table as A2PE");
  std::string export_out = "pe.a2pe";
  export_cmd->add_option("--out", export_out, "output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      DatasetSpec spec;
      if (!gen_spec.empty()) {
        std::ifstream in(gen_spec);
        if (!in) throw IoError("cannot open spec " + gen_spec);
        json j;
        try {
          in >> j;
        } catch (const json::exception& e) {
          throw ConfigError(std::string("malformed spec: ") + e.what());
        }
        spec = dataset_spec_from_json(j);
      }
      if (!gen_classes.empty()) {
        spec.classes.clear();
        for (const auto& n : split_commas(gen_classes)) {
          try {
            spec.classes.push_back(parse_shape_kind(n));
          } catch (const ConfigError&) {
            throw UsageError("unknown class '" + n + "' (sphere, cube, torus, cylinder, cone)");
          }
        }
      }
      if (gen_train) spec.train_per_class = *gen_train;
      if (gen_test) spec.test_per_class = *gen_test;
      if (gen_points) spec.n_points = *gen_points;
      if (gen_jitter) spec.jitter = *gen_jitter;
      if (gen_seed) spec.seed = *gen_seed;
      const Dataset d = make_shape_dataset(spec);
      write_dataset(gen_out, d, spec);
      std::printf("wrote %zu train + %zu test clouds to %s\n", d.train.size(), d.test.size(),
                  gen_out.c_str());
      return 0;
    }

    if (train_cmd->parsed()) {
      const TrainConfig cfg = resolve_config(config_paths["train"], overrides["train"]);
      const BackboneBundle backbone = make_backbone(cfg);
      const Dataset data = load_dataset(cfg);
      Model model(cfg.model, backbone);
      const std::string before = backbone.sha256();
      const TrainResult r = train(model, data.train, data.test.empty() ? nullptr : &data.test, cfg);
      if (backbone.sha256() != before) throw Error(ErrorKind::kNumeric, "backbone changed");
      make_dir(train_out);
      write_metrics_csv(fs::path(train_out) / "metrics.csv", r.history);
      model.save(fs::path(train_out) / "trainables");
      write_json(fs::path(train_out) / "config.json", to_json(cfg));
      for (const auto& m : r.history) {
        std::fprintf(stderr, "epoch %d loss %.4f acc %s lr %.3g (%.1fs)\n", m.epoch, m.loss,
                     m.acc >= 0 ? std::to_string(m.acc).c_str() : "-", m.lr, m.seconds);
      }
      print_params(r.report);
      if (r.final_acc >= 0) std::printf("accuracy=%.4f\n", r.final_acc);
      return 0;
    }

    if (eval_cmd->parsed()) {
      const TrainConfig cfg = resolve_config(config_paths["eval"], overrides["eval"]);
      const BackboneBundle backbone = make_backbone(cfg);
      const Dataset data = load_dataset(cfg);
      Model model(cfg.model, backbone);
      model.load(eval_ckpt);
      std::printf("%.4f\n", evaluate(model, data.test, cfg.threads));
      return 0;
    }

    if (ablate_cmd->parsed()) {
      const TrainConfig cfg = resolve_config(config_paths["ablate"], overrides["ablate"]);
      const Dataset data = load_dataset(cfg);
      std::vector<std::string> tables;
      if (ablate_table == "all") {
        tables = ablation_table_names();
      } else {
        tables = split_commas(ablate_table);
      }
      make_dir(ablate_out);
      for (const auto& t : tables) {
        const AblationTable result = run_ablation(t, cfg, data, &std::cerr);
        const fs::path path = fs::path(ablate_out) / (t + ".csv");
        write_ablation_csv(path, result);
        std::printf("%s\n", path.string().c_str());
      }
      return 0;
    }

    if (params_cmd->parsed()) {
      const TrainConfig cfg = resolve_config(config_paths["params"], overrides["params"]);
      if (cfg.backbone_path.empty()) {
        print_params(param_report(cfg.model, backbone_config_for(cfg)));
      } else {
        const BackboneBundle backbone = make_backbone(cfg);
        print_params(Model(cfg.model, backbone).param_report());
      }
      return 0;
    }

    if (inspect_cmd->parsed()) {
      const TrainConfig cfg = resolve_config(config_paths["inspect"], overrides["inspect"]);
      const BackboneBundle backbone = make_backbone(cfg);
      Model model(cfg.model, backbone);
      if (!inspect_ckpt.empty()) model.load(inspect_ckpt);
      const PointCloud cloud = read_point_cloud(inspect_input);
      const PreparedSample s = model.prepare(cloud);
      const Model::Inspection ins = model.inspect(s);
      const int blocks = static_cast<int>(ins.trace.attention.size());
      const int block = inspect_block < 0 ? blocks - 1 : inspect_block;
      if (block >= blocks) throw UsageError("--block out of range");
      const Mat& p = ins.trace.attention[block];
      std::vector<double> scores(p.cols() - 1);
      for (Eigen::Index j = 1; j < p.cols(); ++j) scores[j - 1] = p(0, j);
      std::vector<double> sim;
      const std::vector<int> labels = similarity_dump(ins.cls, ins.tokens, inspect_clusters, &sim);
      make_dir(inspect_out);
      write_token_csv(fs::path(inspect_out) / "attention.csv", s.coords, scores, "score");
      write_token_csv(fs::path(inspect_out) / "similarity.csv", s.coords, sim, "similarity");
      write_token_csv(fs::path(inspect_out) / "clusters.csv", s.coords,
                      std::vector<double>(labels.begin(), labels.end()), "cluster");
      std::printf("wrote %d token rows to %s\n", s.coords.rows() > 0 ? int(s.coords.rows()) : 0,
                  inspect_out.c_str());
      return 0;
    }

    if (export_cmd->parsed()) {
      const TrainConfig cfg = resolve_config(config_paths["export-pe"], overrides["export-pe"]);
      const BackboneBundle backbone = make_backbone(cfg);
      write_pe_table(export_out, backbone.pe);
      std::printf("%s\n", export_out.c_str());
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
