// Command-line front end: train / eval / predict / gradcheck / synth.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "edgedepth/commands.hpp"
#include "edgedepth/errors.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string preset = "desk";
  long long seed = -1;
  std::string cap;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "key=value config file");
  cmd->add_option("--preset", args->preset, "desk|nyu|kitti (default desk)");
  cmd->add_option("--seed", args->seed, "override train.seed");
  cmd->add_option("--cap", args->cap, "evaluation depth cap, e.g. 0-80");
  cmd->add_option("--out", args->out, "output directory");
}

edgedepth::RunConfig resolve(const CommonArgs& args) {
  edgedepth::RunConfig cfg =
      args.config_path.empty()
          ? edgedepth::preset_config(args.preset)
          : edgedepth::load_run_config(args.config_path, args.preset);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.cap.empty()) edgedepth::apply_cap_range(cfg, args.cap);
  if (!args.out.empty()) cfg.out_dir = args.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular depth estimation with patch-graph edge convolutions"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, predict_args, synth_args;
  std::string checkpoint, split = "val", input_path, output_path, scope = "all";
  int synth_train = 8, synth_val = 2;

  CLI::App* train = app.add_subcommand("train", "train on <data_root>/train");
  add_common(train, &train_args);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, &eval_args);
  eval->add_option("--checkpoint", checkpoint, "ECDW checkpoint")->required();
  eval->add_option("--split", split, "dataset split (default val)");

  CLI::App* predict = app.add_subcommand("predict", "predict depth for one raster");
  add_common(predict, &predict_args);
  predict->add_option("--checkpoint", checkpoint, "ECDW checkpoint")->required();
  predict->add_option("input", input_path, "input RGB .drf")->required();
  predict->add_option("output", output_path, "output depth .drf")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("scope", scope, "all or a name prefix (default all)");

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic scenes");
  add_common(synth, &synth_args);
  synth->add_option("--train-count", synth_train, "training samples (default 8)");
  synth->add_option("--val-count", synth_val, "validation samples (default 2)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return edgedepth::cmd_train(resolve(train_args), std::cout);
    }
    if (eval->parsed()) {
      return edgedepth::cmd_eval(resolve(eval_args), checkpoint, split, std::cout);
    }
    if (predict->parsed()) {
      return edgedepth::cmd_predict(resolve(predict_args), checkpoint, input_path,
                                    output_path, std::cout);
    }
    if (gradcheck->parsed()) {
      return edgedepth::cmd_gradcheck(scope, std::cout);
    }
    if (synth->parsed()) {
      return edgedepth::cmd_synth(resolve(synth_args), synth_train, synth_val, std::cout);
    }
  } catch (const edgedepth::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return edgedepth::kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return edgedepth::kExitCheckFailure;
  }
  return edgedepth::kExitConfigError;
}
