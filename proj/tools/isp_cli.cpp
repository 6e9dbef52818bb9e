#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "isp/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration file")->required();
  cmd->add_option("--seed", c.seed, "Override the configured seed");
  cmd->add_option("--out", c.out, "Output directory (defaults to output_dir)");
}

isp::RunConfig resolve(const Common& c) {
  isp::RunConfig cfg = isp::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Indirect simultaneous positioning: simulate, train, evaluate and plan"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, plan_opts, roll_opts, mesh_opts;
  std::string variant = "augmented";
  std::vector<std::uint64_t> seeds;
  std::string eval_policy, plan_policy, roll_policy;
  std::string plan_spec, roll_spec;
  std::optional<int> roll_steps;
  bool timing = false;

  auto* train = app.add_subcommand("train", "Train a soft actor-critic policy");
  add_common(train, train_opts);
  train->add_option("--variant", variant, "augmented (K from config) or plain (K = 1)")
      ->check(CLI::IsMember({"augmented", "plain"}));
  train->add_option("--seeds", seeds, "Train several seeds; outputs go to <out>/seed_<n>")
      ->delimiter(',');

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy on randomized episodes");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--policy", eval_policy, "Checkpoint path (policy.bin) or 'expert'")
      ->required();

  auto* plan = app.add_subcommand("plan", "Plan grasp points for a spec by Bayesian optimization");
  add_common(plan, plan_opts);
  plan->add_option("--policy", plan_policy, "Checkpoint path (policy.bin) or 'expert'")->required();
  plan->add_option("--spec", plan_spec, "Spec file (JSON)")->required();
  plan->add_flag("--timing", timing, "Record wall time in plan.json");

  auto* rollout = app.add_subcommand("rollout", "Roll out a policy and write a per-step trace");
  add_common(rollout, roll_opts);
  rollout->add_option("--policy", roll_policy, "Checkpoint path (policy.bin) or 'expert'")
      ->required();
  rollout->add_option("--spec", roll_spec, "Spec file (JSON)")->required();
  rollout->add_option("--steps", roll_steps, "Control steps (defaults to rollout.steps)");

  auto* mesh = app.add_subcommand("mesh-export", "Write the tissue mesh as text");
  add_common(mesh, mesh_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? isp::kExitOk : isp::kExitConfig;
  }

  try {
    if (*train) {
      const isp::RunConfig cfg = resolve(train_opts);
      const isp::Variant v = isp::parse_variant(variant);
      if (seeds.empty()) {
        isp::cmd_train(cfg, v, cfg.output_dir, [](const isp::CurvePoint& p) {
          std::cerr << "step " << p.step << " return " << p.mean_return << '\n';
        });
      } else {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(seeds.size());
        std::mutex log_mutex;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
          workers.emplace_back([&, i] {
            try {
              isp::RunConfig c = cfg;
              c.seed = seeds[i];
              const std::string dir = cfg.output_dir + "/seed_" + std::to_string(seeds[i]);
              isp::cmd_train(c, v, dir, [&, i](const isp::CurvePoint& p) {
                std::lock_guard lock(log_mutex);
                std::cerr << "seed " << seeds[i] << " step " << p.step << " return "
                          << p.mean_return << '\n';
              });
            } catch (...) {
              errors[i] = std::current_exception();
            }
          });
        }
        for (auto& w : workers) w.join();
        for (auto& e : errors) {
          if (e) std::rethrow_exception(e);
        }
      }
    } else if (*evaluate) {
      const isp::RunConfig cfg = resolve(eval_opts);
      const auto report = isp::cmd_evaluate(cfg, eval_policy, cfg.output_dir);
      std::cout << "mean_return " << report["mean_return"].get<double>() << " std_return "
                << report["std_return"].get<double>() << '\n';
    } else if (*plan) {
      const isp::RunConfig cfg = resolve(plan_opts);
      const auto r = isp::cmd_plan(cfg, plan_policy, plan_spec, cfg.output_dir, timing);
      std::cout << "best grasp nodes " << r.best_grasp_nodes.first << ' '
                << r.best_grasp_nodes.second << " objective_mm " << r.best_objective << '\n';
    } else if (*rollout) {
      const isp::RunConfig cfg = resolve(roll_opts);
      isp::cmd_rollout(cfg, roll_policy, roll_spec, roll_steps.value_or(cfg.rollout_steps),
                       cfg.output_dir);
    } else if (*mesh) {
      const isp::RunConfig cfg = resolve(mesh_opts);
      isp::cmd_mesh_export(cfg, cfg.output_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return isp::exit_code_for(e);
  }
  return isp::kExitOk;
}
