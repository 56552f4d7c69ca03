// Command-line driver for the graph OOD detection pipeline.
//
// Exit codes: 0 success, 2 bad config/usage, 3 numeric failure,
// 4 missing input artifact.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "gdda/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliState {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string stage_cache;
  std::vector<double> lambdas{0.0, 0.1, 0.4, 0.7};
};

gdda::ExperimentConfig load_cfg(const CliState& st) {
  gdda::ExperimentConfig cfg =
      st.config_path.empty()
          ? gdda::parse_experiment_config(json::object())
          : gdda::load_experiment_config(st.config_path);
  if (st.seed_set) cfg.seed = st.seed;
  if (!st.out.empty()) cfg.output_dir = st.out;
  return cfg;
}

gdda::StageCache make_cache(const CliState& st) {
  return st.stage_cache.empty() ? gdda::StageCache()
                                : gdda::StageCache(st.stage_cache);
}

gdda::RunPaths make_paths(const gdda::ExperimentConfig& cfg) {
  gdda::RunPaths paths{cfg.output_dir};
  fs::create_directories(paths.out);
  return paths;
}

void print_metrics(const json& report) {
  std::cout << "method=" << report.at("method").get<std::string>()
            << " auroc=" << report.at("auroc").get<double>()
            << " aupr=" << report.at("aupr").get<double>()
            << " fpr95=" << report.at("fpr95").get<double>()
            << " ind_acc=" << report.at("ind_acc").get<double>() << "\n";
}

void print_aggregate(const json& agg) {
  if (agg.contains("auroc") && agg.at("auroc").is_object()) {
    std::cout << "method=" << agg.at("method").get<std::string>()
              << " auroc=" << agg.at("auroc").at("mean").get<double>()
              << " (+/- " << agg.at("auroc").at("std").get<double>() << ")"
              << " fpr95=" << agg.at("fpr95").at("mean").get<double>()
              << " ind_acc=" << agg.at("ind_acc").at("mean").get<double>()
              << "\n";
  } else {
    print_metrics(agg);
  }
}

// Runs full + both single-pool ablations against one shared cache so the
// upstream stages are computed once, then writes a comparison report.
json run_ablations(const gdda::ExperimentConfig& base,
                   const gdda::StageCache& cache) {
  json report;
  for (const std::string& mode :
       {std::string("none"), std::string("no_pseudo_ind"),
        std::string("no_pseudo_ood")}) {
    gdda::ExperimentConfig cfg = base;
    cfg.ablation = mode;
    cfg.canonical["ablation"] = mode;
    cfg.config_hash = gdda::sha256_hex(cfg.canonical.dump());
    std::string tag = mode == "none" ? "full" : mode;
    cfg.output_dir = (fs::path(base.output_dir) / tag).string();
    json agg = gdda::run_seeds(cfg, cache, /*baseline=*/false);
    report[tag] = std::move(agg);
  }
  std::ofstream out(fs::path(base.output_dir) / "ablation.json");
  if (!out) throw gdda::IoError("cannot write ablation report");
  out << report.dump(2) << "\n";
  return report;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-phase semantic OOD detection for graphs"};
  app.fallthrough();
  app.require_subcommand(1);

  CliState st;
  app.add_option("--config", st.config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", st.seed, "Override the run seed");
  app.add_option("--out", st.out, "Override the output directory");
  app.add_option("--stage-cache", st.stage_cache,
                 "Directory for cached stage outputs");

  CLI::App* gen_data = app.add_subcommand("gen-data", "Generate the benchmark");
  CLI::App* train_p1 =
      app.add_subcommand("train-p1", "Train backbone + disentangler");
  CLI::App* train_diff =
      app.add_subcommand("train-diff", "Train the factor score network");
  CLI::App* gen_pseudo = app.add_subcommand(
      "gen-pseudo", "Sample pseudo-InD / pseudo-OOD representations");
  CLI::App* train_det =
      app.add_subcommand("train-det", "Train the energy detector");
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score the test splits");
  CLI::App* sweep = app.add_subcommand(
      "sweep-lambda", "Factor shift distance vs. perturbation strength");
  sweep->add_option("--lambdas", st.lambdas,
                    "Perturbation strengths to sweep");
  CLI::App* ablate =
      app.add_subcommand("ablate", "Full model vs. single-pool ablations");
  CLI::App* baseline =
      app.add_subcommand("baseline", "Energy detector without pseudo data");
  CLI::App* run_all =
      app.add_subcommand("run-all", "All stages end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  st.seed_set = seed_opt->count() > 0;

  try {
    gdda::ExperimentConfig cfg = load_cfg(st);
    gdda::StageCache cache = make_cache(st);

    if (gen_data->parsed()) {
      gdda::stage_data(cfg, make_paths(cfg), cache);
    } else if (train_p1->parsed()) {
      gdda::stage_phase1(cfg, make_paths(cfg), cache);
    } else if (train_diff->parsed()) {
      gdda::stage_score(cfg, make_paths(cfg), cache);
    } else if (gen_pseudo->parsed()) {
      gdda::stage_pseudo(cfg, make_paths(cfg), cache);
    } else if (train_det->parsed()) {
      gdda::stage_detector(cfg, make_paths(cfg), cache, /*baseline=*/false);
    } else if (eval_cmd->parsed()) {
      print_metrics(gdda::stage_eval(cfg, make_paths(cfg), false));
    } else if (sweep->parsed()) {
      auto rows = gdda::run_lambda_sweep(cfg, cache, st.lambdas);
      for (const auto& r : rows)
        std::cout << "lambda=" << r.lambda
                  << " dist_c=" << r.mean_distance_c
                  << " dist_s=" << r.mean_distance_s << "\n";
    } else if (ablate->parsed()) {
      json report = run_ablations(cfg, cache);
      for (const auto& item : report.items()) {
        std::cout << item.key() << ": ";
        print_aggregate(item.value());
      }
    } else if (baseline->parsed()) {
      print_aggregate(gdda::run_seeds(cfg, cache, /*baseline=*/true));
    } else if (run_all->parsed()) {
      print_aggregate(gdda::run_seeds(cfg, cache, /*baseline=*/false));
    }
  } catch (const gdda::MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const gdda::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const gdda::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const gdda::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const gdda::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
