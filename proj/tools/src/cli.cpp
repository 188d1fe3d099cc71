// Copyright 2026 The bevintent Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bevintent/cli/commands.hpp"
#include "bevintent/errors.hpp"

namespace bevintent::cli
{

namespace
{

struct GlobalOptions
{
  std::string preset{"toy"};
  std::string config;
  std::vector<std::string> sets;
  std::string dataset;
  std::string output;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
};

pipeline::RunConfig assemble_config(const GlobalOptions & g)
{
  pipeline::RunConfig cfg;
  pipeline::apply_run_key(cfg, "preset", g.preset);
  if (!g.config.empty()) pipeline::apply_config_file(cfg, g.config);
  if (!g.dataset.empty()) cfg.dataset = g.dataset;
  if (!g.output.empty()) cfg.output = g.output;
  if (!g.checkpoint.empty()) cfg.checkpoint = g.checkpoint;
  if (g.seed) cfg.master_seed = *g.seed;
  for (const auto & kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    pipeline::apply_run_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int run_cli(int argc, const char * const * argv, std::ostream & out, std::ostream & err)
{
  CLI::App app{"Joint vehicle detection, intention and trajectory prediction on synthetic BEV scenes", "bevintent"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--preset", g.preset, "Base configuration (toy, default)")->capture_default_str();
  app.add_option("--config", g.config, "Key-value config file applied over the preset");
  app.add_option("--set", g.sets, "Override one key, e.g. --set train.steps=100 (repeatable)");
  app.add_option("--dataset", g.dataset, "Dataset directory");
  app.add_option("--output", g.output, "Output directory");
  app.add_option("--checkpoint", g.checkpoint, "Checkpoint file");
  app.add_option("--seed", g.seed, "Master seed");

  SynthOptions synth;
  auto * c_synth = app.add_subcommand("synth", "Generate synthetic scenarios and a manifest into the dataset directory");
  c_synth->add_option("-n,--count", synth.count, "Number of scenarios")->required();
  c_synth->add_option("--holdout", synth.holdout, "Trailing scenarios assigned to the test split");

  EncodeOptions encode;
  int encode_frame = -1;
  auto * c_encode = app.add_subcommand("encode", "Dump LiDAR and map tensors for scenario frames");
  c_encode->add_option("scenario", encode.scenario, "Scenario file")->required();
  c_encode->add_option("--frame", encode_frame, "Single frame (default: every usable frame)");

  TrainOptions train;
  std::string resume;
  auto * c_train = app.add_subcommand("train", "Train on a manifest split");
  c_train->add_option("--split", train.split, "Manifest split")->capture_default_str();
  c_train->add_option("--resume", resume, "Continue from this checkpoint");

  EvalOptions eval;
  std::string eval_predictions;
  auto * c_eval = app.add_subcommand("eval", "Evaluate a checkpoint (or saved predictions) on a manifest split");
  c_eval->add_option("--split", eval.split, "Manifest split")->capture_default_str();
  c_eval->add_flag("--ground-truth", eval.ground_truth, "Score the ground truth itself");
  c_eval->add_option("--predictions", eval_predictions, "Directory of saved prediction files");

  PredictOptions predict;
  auto * c_predict = app.add_subcommand("predict", "Write tracked predictions per scenario");
  c_predict->add_option("--split", predict.split, "Manifest split")->capture_default_str();

  VizOptions viz;
  std::string viz_predictions;
  auto * c_viz = app.add_subcommand("viz", "Render one frame as SVG");
  c_viz->add_option("scenario", viz.scenario, "Scenario file")->required();
  c_viz->add_option("--predictions", viz_predictions, "Prediction file");
  c_viz->add_option("--frame", viz.frame, "Frame index")->required();
  c_viz->add_option("-o,--out", viz.out, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  pipeline::RunConfig cfg;
  try {
    cfg = assemble_config(g);
  } catch (const std::exception & e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  if (encode_frame >= 0) encode.frame = encode_frame;
  if (!resume.empty()) train.resume = resume;
  if (!eval_predictions.empty()) eval.predictions = eval_predictions;
  if (!viz_predictions.empty()) viz.predictions = viz_predictions;

  try {
    if (*c_synth) cmd_synth(cfg, synth, err);
    else if (*c_encode) cmd_encode(cfg, encode, err);
    else if (*c_train) cmd_train(cfg, train, err);
    else if (*c_eval) cmd_eval(cfg, eval, err);
    else if (*c_predict) cmd_predict(cfg, predict, err);
    else if (*c_viz) cmd_viz(cfg, viz, err);
  } catch (const ConfigError & e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception & e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace bevintent::cli
