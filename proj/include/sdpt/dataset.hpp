#ifndef SDPT_DATASET_HPP
#define SDPT_DATASET_HPP

#include <string>
#include <vector>

#include "json.hpp"
#include "sdpt/model.hpp"
#include "sdpt/synthdata.hpp"
#include "sdpt/trainer.hpp"

namespace sdpt {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Clip directory layout:
//   <dir>/meta.json                 {"name", "frames", "height", "width"}
//   <dir>/frames/000000.ppm ...     RGB frames
//   <dir>/depth/000000.pfm  ...     inverse depth
//   <dir>/valid/000000.pfm  ...     depth validity in {0, 1}
//   <dir>/flow/000000.flo5  ...     forward flow i -> i+1 (frames - 1 files)
void write_clip_dir(const std::string& dir, const LabeledClip& clip);
LabeledClip read_clip_dir(const std::string& dir);

// A dataset root holds one clip directory per clip, read in name order.
void write_dataset(const std::string& root, const std::vector<LabeledClip>& clips);
std::vector<LabeledClip> read_dataset(const std::string& root);

// Full training snapshot (model config + parameters + optimizer moments +
// step count) in the checkpoint container. Loading restores bit-identically.
void save_training_state(const std::string& path, Model& model, const ModelConfig& cfg,
                         Adam& opt);
ModelConfig checkpoint_model_config(const std::string& path);
// `opt` may be null when only the weights are wanted (inference).
void load_training_state(const std::string& path, Model& model, const ModelConfig& cfg,
                         Adam* opt);

}  // namespace sdpt

#endif
