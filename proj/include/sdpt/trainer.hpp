#ifndef SDPT_TRAINER_HPP
#define SDPT_TRAINER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sdpt/losses.hpp"
#include "sdpt/model.hpp"
#include "sdpt/synthdata.hpp"

namespace sdpt {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over the model's trainable parameters. Moments are keyed by parameter
// name so the full optimizer state can be checkpointed and restored.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }

  // One bias-corrected update at the given learning rate; consumes and
  // clears the accumulated gradients.
  void step(Model& model, double lr);

  std::map<std::string, std::vector<double>>& moments_m() { return m_; }
  std::map<std::string, std::vector<double>>& moments_v() { return v_; }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct TrainConfig {
  std::size_t steps = 200;
  AdamConfig adam;
  bool cosine_lr = true;  // half-cosine decay from adam.lr to 0 over `steps`
  std::uint64_t batch_seed = 1;
  std::size_t video_frames = 8;
  std::size_t image_frames = 4;
  std::size_t num_keyframes = 4;
  LossWeights weights;
  std::string log_path;  // JSONL loss log, appended; empty writes nothing
};

struct Batch {
  bool video = false;
  Tensor frames, gt, valid;  // (n, c, h, w) / (n, 1, h, w)
  Tensor keyframes;          // video batches only
};

// Pure function of (clips, cfg, step): even steps draw independent single
// frames, odd steps draw a contiguous clip window plus keyframes spread
// uniformly over the whole source clip. No state carries over between steps,
// so a resumed run sees exactly the batches the uninterrupted run would have
// seen.
Batch make_batch(const std::vector<LabeledClip>& clips, const TrainConfig& cfg, std::size_t step);

double lr_at(const TrainConfig& cfg, std::size_t step);

struct StepStats {
  std::size_t step = 0;
  double lr = 0.0;
  double ssi = 0.0, gm = 0.0, tgm = 0.0, total = 0.0;
};

// Forward, loss, backward, optimizer update. Throws NumericError naming the
// step if the loss is not finite.
StepStats train_step(Model& model, Adam& opt, const Batch& batch, const TrainConfig& cfg);

// Runs batches opt.step_count() .. cfg.steps - 1; restoring optimizer state
// therefore resumes mid-run. Returns one entry per executed step.
std::vector<StepStats> train(Model& model, Adam& opt, const std::vector<LabeledClip>& clips,
                             const TrainConfig& cfg);

}  // namespace sdpt

#endif
