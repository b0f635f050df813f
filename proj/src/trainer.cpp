#include "sdpt/trainer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "sdpt/errors.hpp"
#include "sdpt/ops.hpp"
#include "sdpt/scheduler.hpp"

namespace sdpt {

void Adam::step(Model& model, double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  model.visit_params([&](const std::string& name, Tensor& p) {
    if (!p.requires_grad()) return;
    const auto& g = p.grad();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() != g.size()) m.assign(g.size(), 0.0);
    if (v.size() != g.size()) v.assign(g.size(), 0.0);
    auto& vals = p.mutable_values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      vals[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
    p.zero_grad();
  });
}

Batch make_batch(const std::vector<LabeledClip>& clips, const TrainConfig& cfg,
                 std::size_t step) {
  if (clips.empty()) throw ConfigError("make_batch: no clips");
  if (cfg.video_frames < 2) throw ConfigError("make_batch: video batches need >= 2 frames");
  if (cfg.image_frames < 1 || cfg.num_keyframes < 1) {
    throw ConfigError("make_batch: batch sizes must be positive");
  }
  Rng rng = Rng(cfg.batch_seed).fork(step);
  Batch b;
  b.video = step % 2 == 1;
  if (b.video) {
    const auto& clip =
        clips[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(clips.size()) - 1))];
    const std::size_t n = clip.frames.shape()[0];
    if (n < cfg.video_frames) throw ConfigError("make_batch: clip shorter than the video window");
    const std::size_t start =
        static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(n - cfg.video_frames)));
    LabeledClip window = slice_clip(clip, start, cfg.video_frames);
    b.frames = window.frames;
    b.gt = window.depth;
    b.valid = window.valid;
    // Keyframes anchor on the whole source clip, not the window, mirroring
    // inference where shared keyframes span the full video.
    b.keyframes =
        index_select0(clip.frames, pick_keyframes(n, cfg.num_keyframes, KeyframeMode::uniform));
  } else {
    std::vector<Tensor> frames, gts, valids;
    for (std::size_t i = 0; i < cfg.image_frames; ++i) {
      const auto& clip =
          clips[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(clips.size()) - 1))];
      const std::size_t n = clip.frames.shape()[0];
      const std::size_t f = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(n) - 1));
      frames.push_back(slice(clip.frames, 0, f, 1));
      gts.push_back(slice(clip.depth, 0, f, 1));
      valids.push_back(slice(clip.valid, 0, f, 1));
    }
    b.frames = concat(frames, 0);
    b.gt = concat(gts, 0);
    b.valid = concat(valids, 0);
  }
  return b;
}

double lr_at(const TrainConfig& cfg, std::size_t step) {
  if (!cfg.cosine_lr || cfg.steps == 0) return cfg.adam.lr;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.steps));
  return cfg.adam.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

StepStats train_step(Model& model, Adam& opt, const Batch& batch, const TrainConfig& cfg) {
  const std::size_t step = opt.step_count();
  LossBreakdown lb;
  if (batch.video) {
    Tensor pred = model.forward_video(batch.frames, batch.keyframes);
    lb = combined_video_loss(pred, batch.gt, batch.valid, batch.frames, cfg.weights);
  } else {
    Tensor pred = model.forward_image(batch.frames);
    lb = combined_image_loss(pred, batch.gt, batch.valid, cfg.weights);
  }
  StepStats st;
  st.step = step;
  st.total = lb.total.scalar();
  if (!std::isfinite(st.total)) {
    throw NumericError("train_step: non-finite loss at step " + std::to_string(step) +
                       " (batch seed " + std::to_string(cfg.batch_seed) + ")");
  }
  lb.total.backward();
  st.lr = lr_at(cfg, step);
  opt.step(model, st.lr);
  st.ssi = lb.ssi.scalar();
  st.gm = lb.gm.scalar();
  st.tgm = lb.tgm.scalar();
  return st;
}

std::vector<StepStats> train(Model& model, Adam& opt, const std::vector<LabeledClip>& clips,
                             const TrainConfig& cfg) {
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw IoError("train: cannot open log file " + cfg.log_path);
  }
  std::vector<StepStats> history;
  while (opt.step_count() < cfg.steps) {
    Batch b = make_batch(clips, cfg, opt.step_count());
    StepStats st = train_step(model, opt, b, cfg);
    if (log.is_open()) {
      nlohmann::json line = {{"step", st.step},
                             {"l_ssi", st.ssi},
                             {"l_gm", st.gm},
                             {"l_tgm", st.tgm},
                             {"total", st.total}};
      log << line.dump() << "\n";
    }
    history.push_back(st);
  }
  return history;
}

}  // namespace sdpt
