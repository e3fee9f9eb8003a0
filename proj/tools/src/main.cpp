#include <cstdint>
#include <iostream>
#include <string>
#include <thread>

#include "CLI11.hpp"

#include "dmlkit/cv.hpp"
#include "dmlkit/effects.hpp"
#include "dmlkit/errors.hpp"
#include "dmlkit/runner.hpp"
#include "dmlkit/weights.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "Average potential outcomes and pairwise effects of a multivalued treatment,\n"
      "estimated with cross-validated post-lasso nuisance models, propensity trimming,\n"
      "and covariate-balance diagnostics from the estimator's implied weights."};

  std::string data_path, config_path, out_dir;
  std::string rule = "min", trim = "minmax", sd_conv = "sum";
  int folds = 10;
  std::uint64_t seed = 0;
  const unsigned hw = std::thread::hardware_concurrency();
  int threads = hw == 0 ? 1 : static_cast<int>(hw);
  bool also_binary = false;
  bool normalize = false;

  app.add_option("--data", data_path, "Input CSV")->required();
  app.add_option("--config", config_path, "Schema JSON describing column roles")->required();
  app.add_option("--out", out_dir, "Report directory (created if missing)")->required();
  app.add_option("--rule", rule, "Penalty rule: min|1se|1se+|2se+ (default min)");
  app.add_option("--folds", folds, "Cross-validation folds (default 10)");
  app.add_option("--trim", trim, "Support rule: minmax|percentile:P|none (default minmax)");
  app.add_option("--seed", seed, "RNG seed; runs never self-seed")->required();
  app.add_option("--sd-convention", sd_conv, "Balance denominator: sum|mean (default sum)");
  app.add_flag("--also-binary", also_binary,
               "Additionally run the any-vs-none collapse into <out>/binary");
  app.add_flag("--normalize-propensity", normalize,
               "Rescale each unit's propensities to sum to one");
  app.add_option("--threads", threads, "Worker pool size (default: machine parallelism)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    dmlkit::run_config cfg;
    cfg.schema = dmlkit::load_schema(config_path);
    cfg.rule = dmlkit::parse_rule(rule);
    cfg.folds = folds;
    cfg.trim = dmlkit::parse_trim(trim);
    cfg.sd_conv = dmlkit::parse_sd_convention(sd_conv);
    cfg.normalize_propensity = normalize;
    cfg.also_binary = also_binary;
    cfg.seed = seed;
    cfg.seed_set = true;
    cfg.threads = threads;
    cfg.out_dir = out_dir;
    return dmlkit::run_analysis(cfg, data_path);
  } catch (const dmlkit::config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dmlkit::data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
