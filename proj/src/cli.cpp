#include "sdpt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

#include "CLI11.hpp"
#include "json.hpp"
#include "sdpt/dataset.hpp"
#include "sdpt/errors.hpp"
#include "sdpt/formats.hpp"
#include "sdpt/metrics.hpp"
#include "sdpt/scheduler.hpp"
#include "sdpt/synthdata.hpp"
#include "sdpt/trainer.hpp"

namespace fs = std::filesystem;

namespace sdpt::cli {

namespace {

using nlohmann::json;

std::string frame_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu%s", i, ext);
  return buf;
}

InferencePlan make_plan(const std::string& kind, std::size_t n, std::size_t window,
                        std::size_t overlap, std::size_t keyframes) {
  switch (plan_kind_from_name(kind)) {
    case PlanKind::batched:
      return plan_batched(n, window);
    case PlanKind::overlap:
      return plan_overlap(n, window, overlap);
    case PlanKind::strided:
      return plan_strided(n, window);
    case PlanKind::strided_kf:
      return plan_strided_kf(n, window, keyframes, KeyframeMode::uniform);
  }
  throw ConfigError("plan: unknown kind " + kind);
}

json plan_to_json(const InferencePlan& p) {
  json snippets = json::array();
  for (const auto& s : p.snippets) snippets.push_back(s.frames);
  const PlanCost c = plan_cost(p);
  return {{"kind", plan_kind_name(p.kind)},
          {"frames", p.num_frames},
          {"snippets", snippets},
          {"keyframes", p.keyframes},
          {"cost",
           {{"frame_encodes", c.frame_encodes},
            {"keyframe_encodes", c.keyframe_encodes},
            {"duplicated", c.duplicated},
            {"relative", c.relative}}}};
}

json report_to_json(const EvalReport& r) {
  return {{"absrel", r.absrel},   {"delta1", r.delta1},
          {"tgm", r.tgm},         {"opw", r.opw},
          {"tc", r.tc},           {"tcc", r.tcc},
          {"tmc", r.tmc},         {"valid_px", r.valid_px},
          {"warp_px", r.warp_px}, {"tcc_skipped", r.tcc_skipped},
          {"tgm_empty_pairs", r.tgm_empty_pairs}};
}

void write_pred_dir(const std::string& dir, const Tensor& pred) {
  fs::create_directories(dir);
  const std::size_t n = pred.shape()[0], h = pred.shape()[2], w = pred.shape()[3];
  const auto& v = pred.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> plane(v.begin() + std::ptrdiff_t(i * h * w),
                              v.begin() + std::ptrdiff_t((i + 1) * h * w));
    write_pfm((fs::path(dir) / frame_name(i, ".pfm")).string(),
              Tensor::from_data({1, h, w}, std::move(plane)));
  }
}

Tensor read_pred_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("no such directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".pfm") files.push_back(entry.path().string());
  }
  if (files.empty()) throw FormatError("no .pfm files under " + dir);
  std::sort(files.begin(), files.end());
  std::vector<double> vals;
  std::size_t h = 0, w = 0;
  for (const auto& f : files) {
    Tensor p = read_pfm(f);
    if (h == 0) {
      h = p.shape()[1];
      w = p.shape()[2];
    } else if (p.shape()[1] != h || p.shape()[2] != w) {
      throw FormatError("mixed image sizes under " + dir);
    }
    vals.insert(vals.end(), p.values().begin(), p.values().end());
  }
  return Tensor::from_data({files.size(), 1, h, w}, std::move(vals));
}

struct LoadedModel {
  ModelConfig cfg;
  Model model;
};

LoadedModel load_model(const std::string& ckpt) {
  ModelConfig cfg = checkpoint_model_config(ckpt);
  Rng rng(0);  // init values are immediately overwritten by the checkpoint
  LoadedModel lm{cfg, Model(cfg, rng)};
  load_training_state(ckpt, lm.model, lm.cfg, nullptr);
  return lm;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"video-consistent inverse depth toolkit"};
  app.name("stabledpt");
  app.require_subcommand(1);

  std::string data_dir, out_path, ckpt_path, resume_path, model_config_path, log_path, pred_dir;
  std::string kind = "strided_kf";
  std::uint64_t seed = 7, batch_seed = 1, init_seed = 1;
  std::size_t steps = 200, window = 16, overlap = 2, keyframes = 4;
  std::size_t video_frames = 8, image_frames = 4, plan_frames = 0;
  double lr = 3e-4;
  bool no_cosine = false, freeze_encoder = false;
  long long slice_row = -1;

  CLI::App* render = app.add_subcommand("render", "write the procedural clip suite as a dataset");
  render->add_option("--out", out_path, "dataset directory")->required();
  render->add_option("--seed", seed, "texture seed");

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", out_path, "checkpoint to write")->required();
  train_cmd->add_option("--steps", steps, "total optimization steps");
  train_cmd->add_option("--batch-seed", batch_seed, "batch sampling seed");
  train_cmd->add_option("--init-seed", init_seed, "weight initialization seed");
  train_cmd->add_option("--lr", lr, "peak learning rate");
  train_cmd->add_flag("--no-cosine", no_cosine, "constant learning rate");
  train_cmd->add_option("--video-frames", video_frames, "frames per video batch");
  train_cmd->add_option("--image-frames", image_frames, "frames per image batch");
  train_cmd->add_option("--keyframes", keyframes, "keyframes per video batch");
  train_cmd->add_flag("--freeze-encoder", freeze_encoder, "do not update encoder weights");
  train_cmd->add_option("--model-config", model_config_path, "model configuration JSON file");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--log", log_path, "JSONL loss log");

  CLI::App* infer = app.add_subcommand("infer", "run clip inference with a schedule");
  infer->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  infer->add_option("--data", data_dir, "clip directory")->required();
  infer->add_option("--out", out_path, "output directory for PFM depth")->required();
  infer->add_option("--kind", kind, "plan kind")
      ->check(CLI::IsMember({"batched", "overlap", "strided", "strided_kf"}));
  infer->add_option("--window", window, "snippet / window length");
  infer->add_option("--overlap", overlap, "overlap frames (overlap plans)");
  infer->add_option("--keyframes", keyframes, "keyframe count (strided_kf plans)");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--kind", kind, "plan kind")
      ->check(CLI::IsMember({"batched", "overlap", "strided", "strided_kf"}));
  eval_cmd->add_option("--window", window, "snippet / window length");
  eval_cmd->add_option("--overlap", overlap, "overlap frames (overlap plans)");
  eval_cmd->add_option("--keyframes", keyframes, "keyframe count (strided_kf plans)");
  eval_cmd->add_option("--report", out_path, "also write the report JSON here");

  CLI::App* plan_cmd = app.add_subcommand("plan", "print an inference schedule and its cost");
  plan_cmd->add_option("--frames", plan_frames, "clip length")->required();
  plan_cmd->add_option("--kind", kind, "plan kind")
      ->check(CLI::IsMember({"batched", "overlap", "strided", "strided_kf"}));
  plan_cmd->add_option("--window", window, "snippet / window length");
  plan_cmd->add_option("--overlap", overlap, "overlap frames (overlap plans)");
  plan_cmd->add_option("--keyframes", keyframes, "keyframe count (strided_kf plans)");

  CLI::App* xtslice = app.add_subcommand(
      "xtslice", "write a fixed-row space-time slice as a PPM image");
  xtslice->add_option("--data", data_dir, "clip directory (slices the RGB frames)");
  xtslice->add_option("--pred", pred_dir, "PFM directory (slices normalized depth)");
  xtslice->add_option("--y", slice_row, "image row (default: middle)");
  xtslice->add_option("--out", out_path, "output PPM")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (render->parsed()) {
      write_dataset(out_path, make_suite(seed));
      out << json{{"dir", out_path}, {"clips", 8}}.dump(2) << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const auto clips = read_dataset(data_dir);
      ModelConfig mc;
      if (!resume_path.empty()) {
        // The checkpoint pins the configuration; overrides would break the
        // state-compatibility check on load.
        mc = checkpoint_model_config(resume_path);
      } else {
        if (!model_config_path.empty()) {
          std::ifstream f(model_config_path);
          if (!f) throw IoError("cannot open " + model_config_path);
          mc = model_config_from_json(json::parse(f));
        }
        if (freeze_encoder) mc.freeze_encoder = true;
      }
      TrainConfig tc;
      tc.steps = steps;
      tc.adam.lr = lr;
      tc.cosine_lr = !no_cosine;
      tc.batch_seed = batch_seed;
      tc.video_frames = video_frames;
      tc.image_frames = image_frames;
      tc.num_keyframes = keyframes;
      tc.log_path = log_path;
      Rng rng(init_seed);
      Model model(mc, rng);
      Adam opt(tc.adam);
      if (!resume_path.empty()) load_training_state(resume_path, model, mc, &opt);
      const auto history = train(model, opt, clips, tc);
      save_training_state(out_path, model, mc, opt);
      json summary = {{"checkpoint", out_path},
                      {"steps_run", history.size()},
                      {"step", opt.step_count()}};
      if (!history.empty()) summary["final_total"] = history.back().total;
      out << summary.dump(2) << "\n";
      return 0;
    }

    if (infer->parsed()) {
      LoadedModel lm = load_model(ckpt_path);
      const LabeledClip clip = read_clip_dir(data_dir);
      const std::size_t n = clip.frames.shape()[0];
      const InferencePlan plan = make_plan(kind, n, window, overlap, keyframes);
      const Tensor pred = execute_plan(lm.model, clip.frames, plan);
      write_pred_dir(out_path, pred);
      out << json{{"out", out_path}, {"frames", n}, {"plan", plan_to_json(plan)}}.dump(2)
          << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      LoadedModel lm = load_model(ckpt_path);
      const auto clips = read_dataset(data_dir);
      MetricOptions opt;
      json per_clip = json::array();
      std::vector<EvalReport> reports;
      for (const auto& clip : clips) {
        const std::size_t n = clip.frames.shape()[0];
        const InferencePlan plan = make_plan(kind, n, window, overlap, keyframes);
        SequenceData data;
        data.pred = execute_plan(lm.model, clip.frames, plan);
        data.gt = clip.depth;
        data.valid = clip.valid;
        data.flows = clip.flows;
        data.frames = clip.frames;
        const EvalReport r = evaluate_sequence(data, opt);
        reports.push_back(r);
        json entry = report_to_json(r);
        entry["name"] = clip.name;
        per_clip.push_back(entry);
      }
      const json report = {{"clips", per_clip},
                           {"mean", report_to_json(average_reports(reports))}};
      out << report.dump(2) << "\n";
      if (!out_path.empty()) {
        std::ofstream f(out_path);
        if (!f) throw IoError("cannot write report to " + out_path);
        f << report.dump(2) << "\n";
      }
      return 0;
    }

    if (plan_cmd->parsed()) {
      out << plan_to_json(make_plan(kind, plan_frames, window, overlap, keyframes)).dump(2)
          << "\n";
      return 0;
    }

    if (xtslice->parsed()) {
      if (data_dir.empty() == pred_dir.empty()) {
        throw ConfigError("xtslice: pass exactly one of --data or --pred");
      }
      Tensor image;
      if (!pred_dir.empty()) {
        const Tensor pred = read_pred_dir(pred_dir);
        const std::size_t n = pred.shape()[0], h = pred.shape()[2], w = pred.shape()[3];
        const std::size_t y =
            slice_row < 0 ? h / 2 : std::size_t(slice_row);
        if (y >= h) throw ShapeError("xtslice: row out of range");
        std::vector<double> sl(n * w);
        double lo = pred.values()[y * w], hi = lo;
        for (std::size_t t = 0; t < n; ++t) {
          for (std::size_t x = 0; x < w; ++x) {
            const double v = pred.values()[(t * h + y) * w + x];
            sl[t * w + x] = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        }
        const double span = hi > lo ? hi - lo : 1.0;
        std::vector<double> rgb(3 * n * w);
        for (std::size_t i = 0; i < n * w; ++i) {
          const double g = (sl[i] - lo) / span;
          rgb[i] = rgb[n * w + i] = rgb[2 * n * w + i] = g;
        }
        image = Tensor::from_data({3, n, w}, std::move(rgb));
      } else {
        const LabeledClip clip = read_clip_dir(data_dir);
        const std::size_t n = clip.frames.shape()[0], h = clip.frames.shape()[2],
                          w = clip.frames.shape()[3];
        const std::size_t y = slice_row < 0 ? h / 2 : std::size_t(slice_row);
        if (y >= h) throw ShapeError("xtslice: row out of range");
        std::vector<double> rgb(3 * n * w);
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t x = 0; x < w; ++x) {
              rgb[(c * n + t) * w + x] = clip.frames.values()[((t * 3 + c) * h + y) * w + x];
            }
          }
        }
        image = Tensor::from_data({3, n, w}, std::move(rgb));
      }
      write_ppm(out_path, image);
      out << json{{"out", out_path}, {"shape", image.shape()}}.dump(2) << "\n";
      return 0;
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace sdpt::cli
