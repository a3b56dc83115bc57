// geco: train, roll out and evaluate GeCO and rectified-flow planners on the
// point-mass task.

#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "geco/commands.hpp"

using namespace geco;

namespace {

enum Exit { ok = 0, validation = 1, runtime = 2, check_failed = 3 };

fs::path output_root(const LoadedConfig& cfg) {
  if (const char* env = std::getenv("GECO_OUTPUT_ROOT"); env && *env) return env;
  return cfg.run.output_dir;
}

LoadedConfig load(const std::string& path, std::optional<std::uint64_t> seed) {
  LoadedConfig cfg = load_config(path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

fs::path default_checkpoint(const LoadedConfig& cfg, const std::string& given) {
  if (!given.empty()) return given;
  return run_directory(cfg, output_root(cfg)) / "model.ckpt";
}

Split parse_split(const std::string& s) {
  if (s == "ID" || s == "id") return Split::id;
  if (s == "OOD" || s == "ood") return Split::ood;
  throw ConfigError("--split must be ID or OOD");
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.find_first_not_of(" ") == std::string::npos) continue;
    const long v = std::stol(item);
    if (v < 1) throw ConfigError("--hidden entries must be >= 1");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GeCO planner experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, checkpoint, baseline;
  std::optional<std::uint64_t> seed;

  auto* train = app.add_subcommand("train", "Train a field from a config; writes <root>/<hash>-s<seed>/");
  train->add_option("config", config_path, "Run config file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "Override the config seed");

  std::vector<int> budgets;
  std::string split = "ID";
  int episodes = -1;
  auto* rollout = app.add_subcommand("rollout", "Roll out a checkpoint for one or more budgets");
  rollout->add_option("config", config_path, "Run config file")->required()->check(CLI::ExistingFile);
  rollout->add_option("--checkpoint", checkpoint, "Checkpoint (default: the run directory's model)");
  rollout->add_option("--budget", budgets, "K_max (GeCO) or Euler steps (baseline); repeatable");
  rollout->add_option("--split", split, "ID or OOD");
  rollout->add_option("--episodes", episodes, "Episode count (default: from config)");
  rollout->add_option("--seed", seed, "Override the config seed");

  auto* eval = app.add_subcommand("eval-ood", "OOD detection metrics for GeCO and the baseline proxy");
  eval->add_option("config", config_path, "Run config file")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", checkpoint, "GeCO checkpoint (default: the run directory's model)");
  eval->add_option("--baseline", baseline, "Rectified-flow checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--seed", seed, "Override the config seed");

  double min_cosine = 0.95;
  auto* oracle = app.add_subcommand("oracle-check", "Compare a trained field with the quadrature oracle");
  oracle->add_option("config", config_path, "Run config file")->required()->check(CLI::ExistingFile);
  oracle->add_option("--checkpoint", checkpoint, "GeCO checkpoint (default: the run directory's model)");
  oracle->add_option("--min-cosine", min_cosine, "Median cosine required to pass");
  oracle->add_option("--seed", seed, "Override the config seed");

  std::size_t in_dim = 6, out_dim = 4;
  std::string hidden = "8,8", activation = "tanh";
  int nets = 20;
  std::uint64_t grad_seed = 0;
  auto* grad = app.add_subcommand("gradcheck", "Reverse-mode gradients vs central differences");
  grad->add_option("--input", in_dim, "Input width");
  grad->add_option("--output", out_dim, "Output width");
  grad->add_option("--hidden", hidden, "Hidden widths, comma separated (empty for none)");
  grad->add_option("--activation", activation, "tanh or softplus");
  grad->add_option("--nets", nets, "Number of random nets");
  grad->add_option("--seed", grad_seed, "Seed");

  std::string report_root;
  auto* report = app.add_subcommand("report", "Aggregate run directories into comparison tables");
  report->add_option("root", report_root, "Directory holding run directories (default: GECO_OUTPUT_ROOT or runs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : validation;
  }

  const std::size_t workers = default_workers();
  try {
    if (*train) {
      const LoadedConfig cfg = load(config_path, seed);
      const auto res = cmd_train(cfg, output_root(cfg), &std::cerr);
      std::cout << "run_dir " << res.run_dir.string() << "\n"
                << "checkpoint " << res.checkpoint.string() << "\n"
                << "digest " << res.digest << "\n"
                << "final_loss " << res.log.final_loss << "\n";
    } else if (*rollout) {
      const LoadedConfig cfg = load(config_path, seed);
      RolloutOptions opt;
      opt.budgets = budgets;
      opt.split = parse_split(split);
      opt.episodes = episodes;
      opt.workers = workers;
      const auto res = cmd_rollout(cfg, default_checkpoint(cfg, checkpoint), output_root(cfg), opt);
      std::cout << "budget,episodes,plans,success_rate,mean_nfe,median_nfe\n";
      for (const auto& s : res.summaries)
        std::cout << s.budget << ',' << s.episodes << ',' << s.plans << ',' << s.success_rate << ','
                  << s.mean_nfe << ',' << s.median_nfe << '\n';
    } else if (*eval) {
      const LoadedConfig cfg = load(config_path, seed);
      std::optional<fs::path> base;
      if (!baseline.empty()) base = baseline;
      const auto res =
          cmd_eval_ood(cfg, default_checkpoint(cfg, checkpoint), base, output_root(cfg), workers);
      std::cout << "method,filter,auroc,tpr,tnr,time_saved\n";
      for (const auto& r : res.rows)
        std::cout << r.method << ',' << to_string(r.filter) << ',' << r.auroc << ',' << r.op.tpr
                  << ',' << r.op.tnr << ',' << r.time_saved << '\n';
    } else if (*oracle) {
      const LoadedConfig cfg = load(config_path, seed);
      const auto rep =
          cmd_oracle_check(cfg, default_checkpoint(cfg, checkpoint), output_root(cfg), workers);
      std::cout << "points " << rep.points << " evaluated " << rep.evaluated
                << " oracle_undefined " << rep.oracle_undefined << " cosine_undefined "
                << rep.cosine_undefined << "\n"
                << "median_cosine " << rep.median_cosine << " (p10 " << rep.cosine_p10 << ", p90 "
                << rep.cosine_p90 << ")\n"
                << "median_magnitude_error " << rep.median_magnitude_error << "\n"
                << "euler_max_error " << rep.euler_max_error << "\n";
      if (!(rep.median_cosine > min_cosine)) return check_failed;
    } else if (*grad) {
      NetworkSpec spec;
      spec.input_dim = in_dim;
      spec.output_dim = out_dim;
      spec.hidden_dims = parse_dims(hidden);
      if (activation == "tanh") spec.activation = Activation::tanh;
      else if (activation == "softplus") spec.activation = Activation::softplus;
      else throw ConfigError("--activation must be tanh or softplus");
      const auto rep = gradcheck(spec, grad_seed, nets);
      std::cout << "nets " << rep.nets << " max_relative_error " << rep.max_relative_error << ' '
                << (rep.pass ? "PASS" : "FAIL") << '\n';
      if (!rep.pass) return check_failed;
    } else if (*report) {
      fs::path root = report_root;
      if (root.empty()) {
        const char* env = std::getenv("GECO_OUTPUT_ROOT");
        root = env && *env ? env : "runs";
      }
      const auto [rollouts, ood] = cmd_report(root);
      std::cout << rollouts << '\n' << ood;
      const auto dir = root;
      detail::write_text(dir / "report_rollout.csv", rollouts);
      detail::write_text(dir / "report_ood.csv", ood);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return validation;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return validation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime;
  }
  return ok;
}
