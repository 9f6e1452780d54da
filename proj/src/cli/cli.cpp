#include "common.hpp"

#include "varjepa/errors.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace varjepa {

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Variational JEPA experiments: data generation, training, ablations, probes"};
  app.require_subcommand(1);
  bool overwrite = false;
  app.add_flag("--overwrite", overwrite, "Replace existing outputs")->configurable(false);

  // gen
  CLI::App* gen = app.add_subcommand("gen", "Generate a dataset");
  std::string gen_kind;
  std::uint64_t gen_seed = 0;
  Eigen::Index gen_n = 0;
  std::string gen_out, gen_images, gen_u;
  int gen_split = 0;
  bool gen_zero = false;
  double gen_lambda = 1.0;
  gen->add_option("kind", gen_kind, "pairs | sim-tabular | corrupt-images")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--n", gen_n, "Number of samples");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--split", gen_split, "pairs: child index of the data stream (1 is the default eval split)");
  gen->add_flag("--zero-ambiguity", gen_zero, "sim-tabular: force u = 0");
  gen->add_option("--images", gen_images, "corrupt-images: IDX image file");
  gen->add_option("--u", gen_u, "corrupt-images: one u value per line");
  gen->add_option("--lambda", gen_lambda, "corrupt-images: corruption scale");
  gen->add_flag("--overwrite", overwrite, "Replace existing outputs");

  // train
  CLI::App* train = app.add_subcommand("train", "Train one run from a JSON config");
  std::string tr_config, tr_data, tr_schema, tr_eval, tr_out;
  std::optional<std::uint64_t> tr_seed;
  train->add_option("--config", tr_config, "JSON config")->required();
  train->add_option("--data", tr_data, "Dataset directory (or CSV for tabular)")->required();
  train->add_option("--schema", tr_schema, "Schema sidecar for CSV input");
  train->add_option("--eval", tr_eval, "Eval pairs directory (simulation)");
  train->add_option("--out", tr_out, "Run directory")->required();
  train->add_option("--seed", tr_seed, "Override the config seed");
  train->add_flag("--overwrite", overwrite, "Replace existing outputs");

  // ablate
  CLI::App* ablate = app.add_subcommand("ablate", "Run variants x seeds and aggregate");
  std::string ab_suite = "ABCDEFGHIJ", ab_out, ab_config;
  int ab_seeds = 3, ab_jobs = 1, ab_epochs = -1, ab_n_eval = -1;
  std::uint64_t ab_data_seed = 0, ab_seed = 0;
  Eigen::Index ab_n = 8192;
  ablate->add_option("--suite", ab_suite, "Variant letters, e.g. AG or A,G");
  ablate->add_option("--seeds", ab_seeds, "Seeds per variant");
  ablate->add_option("--data-seed", ab_data_seed, "Process/data seed base");
  ablate->add_option("--seed", ab_seed, "Training seed base");
  ablate->add_option("--n", ab_n, "Training pairs per seed");
  ablate->add_option("--n-eval", ab_n_eval, "Eval pairs per seed");
  ablate->add_option("--epochs", ab_epochs, "Override epochs");
  ablate->add_option("--config", ab_config, "Simulation config supplying non-weight settings");
  ablate->add_option("--jobs", ab_jobs, "Parallel runs");
  ablate->add_option("--out", ab_out, "Output directory")->required();
  ablate->add_flag("--overwrite", overwrite, "Replace existing outputs");

  // probe
  CLI::App* probe = app.add_subcommand("probe", "Probe and selective evaluation of a trained run");
  std::string pr_run, pr_out, pr_unc;
  std::optional<std::uint64_t> pr_seed;
  probe->add_option("--run", pr_run, "Run directory")->required();
  probe->add_option("--out", pr_out, "Output directory (default RUN/probe)");
  probe->add_option("--uncertainty", pr_unc, "mean | p90 (default from config)");
  probe->add_option("--seed", pr_seed, "Probe split seed");
  probe->add_flag("--overwrite", overwrite, "Replace existing outputs");

  // report
  CLI::App* report = app.add_subcommand("report", "Markdown summary of a run or ablation");
  std::string rp_in, rp_out;
  report->add_option("--in", rp_in, "Run directory, ablation directory or table.csv")->required();
  report->add_option("--out", rp_out, "Markdown file");
  report->add_flag("--overwrite", overwrite, "Replace existing outputs");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  cli::Invocation inv;
  inv.argv = args;
  inv.overwrite = overwrite;
  try {
    if (*gen) {
      return cli::cmd_gen(inv, gen_kind, gen_seed, gen_n, gen_out, gen_split, gen_zero, gen_images, gen_u, gen_lambda);
    }
    if (*train) return cli::cmd_train(inv, tr_config, tr_data, tr_schema, tr_eval, tr_out, tr_seed);
    if (*ablate) {
      AblationOptions opt;
      opt.suite.clear();
      for (char c : ab_suite) {
        if (c != ',' && c != ' ') opt.suite.push_back(c);
      }
      opt.seeds = ab_seeds;
      opt.data_seed = ab_data_seed;
      opt.seed = ab_seed;
      opt.n_train = ab_n;
      opt.jobs = ab_jobs;
      if (!ab_config.empty()) opt.base = simulation_config_from_json(cli::read_json_file(ab_config));
      if (ab_epochs >= 0) opt.base.variant.epochs = ab_epochs;
      if (ab_n_eval >= 0) opt.base.n_eval = ab_n_eval;
      return cli::cmd_ablate(inv, opt, ab_out);
    }
    if (*probe) return cli::cmd_probe(inv, pr_run, pr_out, pr_unc, pr_seed);
    if (*report) return cli::cmd_report(inv, rp_in, rp_out);
  } catch (const NumericalError& e) {
    std::cerr << "error: numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidInput& e) {
    std::cerr << "error: invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace varjepa
