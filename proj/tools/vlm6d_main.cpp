#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "vlm6d/dataset.h"
#include "vlm6d/error.h"
#include "vlm6d/harness.h"
#include "vlm6d/run_config.h"
#include "vlm6d/synth.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vlm6d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kIncompatibleWeights:
      return kExitConfig;
    case ErrorCode::kNumericAbort:
    case ErrorCode::kDegenerateRotation:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

json PoseJson(const Pose &p) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) r.push_back({p.rotation(i, 0), p.rotation(i, 1), p.rotation(i, 2)});
  return {{"rotation", r},
          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"RGB-D 6DoF pose estimation: training, evaluation, inference and toy data"};
  app.require_subcommand(1);

  auto *train = app.add_subcommand("train", "Train from a run config");
  std::string train_config, resume;
  train->add_option("--config", train_config, "Run config (JSON)")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto *evaluate = app.add_subcommand("evaluate", "Per-object ADD(-S) recall table");
  std::string eval_config, eval_ckpt, eval_json;
  evaluate->add_option("--config", eval_config, "Run config (JSON)")->required();
  evaluate->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  evaluate->add_option("--json", eval_json, "Write the report as JSON");

  auto *infer = app.add_subcommand("infer", "Pose of one annotated object");
  std::string infer_ckpt, infer_scene;
  int infer_frame = 0, infer_annotation = 0;
  infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required();
  infer->add_option("--scene", infer_scene, "BOP scene directory")->required();
  infer->add_option("--frame", infer_frame, "Frame id")->required();
  infer->add_option("--annotation", infer_annotation, "Annotation index (crop source)")->required();

  auto *synth = app.add_subcommand("synth", "Write a synthetic toy dataset");
  std::uint64_t synth_seed = 0;
  std::string synth_out, synth_config;
  int synth_frames = 20;
  synth->add_option("--seed", synth_seed, "Scene seed")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--frames", synth_frames, "Number of frames");
  synth->add_option("--config", synth_config, "Toy scene config (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      const RunConfig config = LoadRunConfig(train_config);
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      const TrainResult r = Train(config, from);
      std::cout << json{{"checkpoint", r.final_checkpoint.string()},
                        {"metrics", r.metrics_log.string()},
                        {"initial_pose_loss", r.initial_pose_loss},
                        {"final_pose_loss", r.final_pose_loss},
                        {"steps", r.steps}}
                       .dump(2)
                << '\n';
    } else if (*evaluate) {
      const RunConfig config = LoadRunConfig(eval_config);
      const EvalReport report = Evaluate(config, eval_ckpt);
      std::cout << report.FormatTable();
      if (!eval_json.empty()) {
        std::ofstream out(eval_json);
        if (!out) throw Error(ErrorCode::kIo, "cannot write " + eval_json);
        out << report.ToJson().dump(2) << '\n';
      }
    } else if (*infer) {
      const fs::path scene_dir = fs::path(infer_scene).lexically_normal();
      const fs::path dir = scene_dir.filename().empty() ? scene_dir.parent_path() : scene_dir;
      int scene_id = 0;
      try {
        scene_id = std::stoi(dir.filename().string());
      } catch (const std::exception &) {
        throw Error(ErrorCode::kIngestion, "scene directory name must be numeric: " + dir.string());
      }
      const RGBDFrame frame = LoadBopSample(dir.parent_path(), scene_id, infer_frame);
      if (infer_annotation < 0 || infer_annotation >= static_cast<int>(frame.annotations.size()))
        throw Error(ErrorCode::kIngestion, "annotation " + std::to_string(infer_annotation) +
                                               " not present in frame");
      const InferResult r = Infer(infer_ckpt, frame, frame.annotations[infer_annotation].bbox);
      json out = PoseJson(r.pose);
      out["object_id"] = r.object_id;
      out["class_index"] = r.class_index;
      out["confidence"] = r.confidence;
      std::cout << out.dump(2) << '\n';
    } else if (*synth) {
      ToySceneConfig config = ToySceneConfig::Default();
      if (!synth_config.empty()) {
        std::ifstream in(synth_config);
        if (!in) throw Error(ErrorCode::kConfig, "cannot read " + synth_config);
        try {
          config = ToySceneConfig::FromJson(json::parse(in));
        } catch (const json::exception &e) {
          throw Error(ErrorCode::kConfig, synth_config + ": " + e.what());
        }
      }
      WriteSynthDataset(synth_out, synth_seed, synth_frames, config);
      std::cout << "wrote " << synth_frames << " frames to " << synth_out << '\n';
    }
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCodeFor(e.code());
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
