#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "asc/checkpoint.hpp"
#include "asc/error.hpp"
#include "asc/models.hpp"
#include "asc/pipeline/config.hpp"
#include "asc/pipeline/data.hpp"
#include "asc/pipeline/equivariance.hpp"
#include "asc/pipeline/gradcheck_targets.hpp"
#include "asc/pipeline/train.hpp"

namespace fs = std::filesystem;
using namespace asc;
using namespace asc::pipeline;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_train(const Globals& g, const std::string& config_path, const std::string& data_dir, const std::string& out) {
  auto cfg = load_run_config(config_path);
  if (g.seed_given) {
    cfg.train.seed = g.seed;
    cfg.model.seed = g.seed;
  }
  const auto splits = load_cifar(data_dir, cfg.train.seed, cfg.train.val_split);
  if (cfg.model.num_classes != splits.train.num_classes) {
    std::fprintf(stderr, "note: using %d classes to match the data\n", splits.train.num_classes);
    cfg.model.num_classes = splits.train.num_classes;
  }
  const auto data = prepare(splits, cfg.train);
  std::printf("train %lld  val %lld  variant %s\n", static_cast<long long>(data.train.size()),
              static_cast<long long>(data.val.size()), cfg.model.variant.c_str());
  fs::create_directories(out);
  {
    std::FILE* f = std::fopen((fs::path(out) / "config.json").c_str(), "w");
    if (f) {
      std::fputs((to_json(cfg) + "\n").c_str(), f);
      std::fclose(f);
    }
  }
  TrainHooks hooks;
  hooks.on_step = [](int epoch, std::int64_t step, std::int64_t steps, double loss) {
    if (step % 20 == 0 || step + 1 == steps)
      std::fprintf(stderr, "epoch %d step %lld/%lld loss %.4f\n", epoch, static_cast<long long>(step + 1),
                   static_cast<long long>(steps), loss);
  };
  hooks.on_epoch = [](const EpochMetrics& m) {
    std::printf("epoch %d lr %.4g train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f (%.1fs)\n", m.epoch, m.lr,
                m.train_loss, m.train_acc, m.val_loss, m.val_acc, m.wall_seconds);
    std::fflush(stdout);
  };
  const auto result = train(cfg.model, cfg.train, data, out, hooks);
  std::printf("wrote %s and %s\n", result.final_checkpoint.c_str(), result.best_checkpoint.c_str());
  return 0;
}

int run_eval(const Globals& g, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split_name, int batch_size) {
  const fs::path ckpt(checkpoint);
  const auto card = load_model_card(ckpt.parent_path() / "model.json");
  Model model = build_model(card.model);
  model.load_state(read_checkpoint(ckpt));
  const Split split = split_name == "train" ? Split::Train : split_name == "val" ? Split::Val : Split::Test;
  const auto data = load_cifar(data_dir, split, g.seed_given ? g.seed : card.split_seed, card.val_split);
  const auto e = evaluate(model, data, card.normalization, batch_size);
  std::printf("%s: %lld images  accuracy %.4f  loss %.4f\n", split_name.c_str(), static_cast<long long>(e.count),
              e.accuracy, e.loss);
  return 0;
}

int run_params(const std::string& variant, int classes) {
  const Model model = build_model({variant, classes, 0, 0});
  const auto audit = count_params(model);
  for (const auto& [layer, count] : audit.layers) std::printf("%-40s %10lld\n", layer.c_str(), static_cast<long long>(count));
  std::printf("%-40s %10lld\n", "total", static_cast<long long>(audit.total));
  return 0;
}

int run_equivariance(const Globals& g, const std::string& target, int trials, double tol, bool negative_control) {
  std::vector<std::string> targets;
  if (target == "all") {
    targets = equivariance_layer_targets();
    targets.push_back("p4resnet29_asc");
  } else {
    targets.push_back(target);
  }
  bool ok = true;
  for (const auto& t : targets) {
    const auto report = check_equivariance(t, {trials, tol, g.seed, negative_control});
    for (const auto& p : report.properties) {
      std::printf("%-24s %-40s trials %4d  max_dev %.3e  tol %.0e  %s\n", t.c_str(), p.name.c_str(), p.trials,
                  p.max_deviation, p.tolerance, p.passed ? "PASS" : "FAIL");
    }
    std::fflush(stdout);
    ok = ok && report.passed();
  }
  return ok ? 0 : 1;
}

int run_gradcheck_cmd(const Globals& g, const std::string& target, double eps, double tol) {
  const auto targets = target == "all" ? gradcheck_targets() : std::vector<std::string>{target};
  bool ok = true;
  for (const auto& t : targets) {
    GradcheckOptions o;
    o.eps = eps;
    o.tolerance = tol;
    o.seed = g.seed;
    const auto report = run_gradcheck(t, o);
    for (const auto& in : report.inputs) {
      std::printf("%-24s %-10s entries %4lld  rel_err %.3e\n", t.c_str(), in.name.c_str(),
                  static_cast<long long>(in.checked), in.error);
    }
    std::printf("%-24s max_rel_err %.3e  tol %.0e  %s\n", t.c_str(), report.max_error, tol,
                report.passed ? "PASS" : "FAIL");
    ok = ok && report.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attentive group convolution models: training, evaluation and verification"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->each([&](const std::string&) { g.seed_given = true; });

  std::string config, data, out, checkpoint, split = "test", variant = "resnet29", target;
  int classes = 10, trials = 0, batch_size = 128;
  double tol = 0.0, eps = 1e-3, grad_tol = 1e-3;
  bool negative_control = false;

  auto* train_cmd = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  train_cmd->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data, "Directory with the CIFAR binary files")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", out, "Output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (reads model.json next to it)");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data, "Directory with the CIFAR binary files")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", split, "Which split to score")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--batch-size", batch_size, "Evaluation batch size")->check(CLI::PositiveNumber);

  auto* params_cmd = app.add_subcommand("params", "Print the per-layer parameter audit of a variant");
  params_cmd->add_option("--variant", variant, "Model variant")->required();
  params_cmd->add_option("--classes", classes, "Number of classes")->check(CLI::IsMember({10, 100}));

  auto* eq_cmd = app.add_subcommand("check-equivariance", "Run the symmetry property suite of a layer or model");
  eq_cmd->add_option("--target", target, "Layer name, model variant, or all")->required();
  eq_cmd->add_option("--trials", trials, "Random instances per property (default: per target)");
  eq_cmd->add_option("--tol", tol, "Tolerance (default 1e-5, 1e-4 for models)");
  eq_cmd->add_flag("--negative-control", negative_control, "Use a broken group convention; the check should fail");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare gradients with central differences");
  grad_cmd->add_option("--target", target, "Layer name or all")->required();
  grad_cmd->add_option("--eps", eps, "Finite-difference step");
  grad_cmd->add_option("--tol", grad_tol, "Relative error bound");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(g, config, data, out);
    if (*eval_cmd) return run_eval(g, checkpoint, data, split, batch_size);
    if (*params_cmd) return run_params(variant, classes);
    if (*eq_cmd) return run_equivariance(g, target, trials, tol, negative_control);
    if (*grad_cmd) return run_gradcheck_cmd(g, target, eps, grad_tol);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
