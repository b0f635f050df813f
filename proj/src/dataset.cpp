#include "sdpt/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sdpt/errors.hpp"
#include "sdpt/formats.hpp"

namespace fs = std::filesystem;

namespace sdpt {

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("config: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config: field '") + key + "' has the wrong type");
  }
}

std::string frame_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu%s", i, ext);
  return buf;
}

Tensor plane_of(const Tensor& stack, std::size_t t, std::size_t channels) {
  const std::size_t h = stack.shape()[2], w = stack.shape()[3];
  const std::size_t per = channels * h * w;
  std::vector<double> vals(stack.values().begin() + std::ptrdiff_t(t * per),
                           stack.values().begin() + std::ptrdiff_t((t + 1) * per));
  return Tensor::from_data({channels, h, w}, std::move(vals));
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in " + path + ": " + e.what());
  }
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {
      {"encoder",
       {{"patch_size", cfg.encoder.patch_size},
        {"embed_dim", cfg.encoder.embed_dim},
        {"depth", cfg.encoder.depth},
        {"num_heads", cfg.encoder.num_heads},
        {"tap_indices", cfg.encoder.tap_indices}}},
      {"head",
       {{"feature_dims", cfg.head.feature_dims},
        {"fusion_dim", cfg.head.fusion_dim},
        {"temporal_sites", cfg.head.temporal_sites},
        {"temporal_layers_per_site", cfg.head.temporal_layers_per_site},
        {"num_heads", cfg.head.num_heads},
        {"zero_init_temporal", cfg.head.zero_init_temporal},
        {"self_attention", cfg.head.self_attention}}},
      {"in_channels", cfg.in_channels},
      {"input_h", cfg.input_h},
      {"input_w", cfg.input_w},
      {"freeze_encoder", cfg.freeze_encoder},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  const nlohmann::json enc = field<nlohmann::json>(j, "encoder");
  cfg.encoder.patch_size = field<std::size_t>(enc, "patch_size");
  cfg.encoder.embed_dim = field<std::size_t>(enc, "embed_dim");
  cfg.encoder.depth = field<std::size_t>(enc, "depth");
  cfg.encoder.num_heads = field<std::size_t>(enc, "num_heads");
  cfg.encoder.tap_indices = field<std::vector<std::size_t>>(enc, "tap_indices");
  const nlohmann::json head = field<nlohmann::json>(j, "head");
  cfg.head.feature_dims = field<std::vector<std::size_t>>(head, "feature_dims");
  cfg.head.fusion_dim = field<std::size_t>(head, "fusion_dim");
  cfg.head.temporal_sites = field<std::vector<std::size_t>>(head, "temporal_sites");
  cfg.head.temporal_layers_per_site = field<std::size_t>(head, "temporal_layers_per_site");
  cfg.head.num_heads = field<std::size_t>(head, "num_heads");
  cfg.head.zero_init_temporal = field<bool>(head, "zero_init_temporal");
  cfg.head.self_attention = field<bool>(head, "self_attention");
  cfg.in_channels = field<std::size_t>(j, "in_channels");
  cfg.input_h = field<std::size_t>(j, "input_h");
  cfg.input_w = field<std::size_t>(j, "input_w");
  cfg.freeze_encoder = field<bool>(j, "freeze_encoder");
  cfg.validate();
  return cfg;
}

void write_clip_dir(const std::string& dir, const LabeledClip& clip) {
  const std::size_t t = clip.frames.shape()[0];
  const std::size_t h = clip.frames.shape()[2], w = clip.frames.shape()[3];
  if (clip.flows.size() + 1 != t) throw ShapeError("write_clip_dir: flow count mismatch");
  fs::create_directories(fs::path(dir) / "frames");
  fs::create_directories(fs::path(dir) / "depth");
  fs::create_directories(fs::path(dir) / "valid");
  fs::create_directories(fs::path(dir) / "flow");
  for (std::size_t i = 0; i < t; ++i) {
    write_ppm((fs::path(dir) / "frames" / frame_name(i, ".ppm")).string(),
              plane_of(clip.frames, i, 3));
    write_pfm((fs::path(dir) / "depth" / frame_name(i, ".pfm")).string(),
              plane_of(clip.depth, i, 1));
    write_pfm((fs::path(dir) / "valid" / frame_name(i, ".pfm")).string(),
              plane_of(clip.valid, i, 1));
    if (i + 1 < t) {
      write_flo5((fs::path(dir) / "flow" / frame_name(i, ".flo5")).string(), clip.flows[i]);
    }
  }
  nlohmann::json meta = {
      {"name", clip.name}, {"frames", t}, {"height", h}, {"width", w}};
  std::ofstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw IoError("cannot write meta.json under " + dir);
  mf << meta.dump(2) << "\n";
}

LabeledClip read_clip_dir(const std::string& dir) {
  const nlohmann::json meta = read_json_file((fs::path(dir) / "meta.json").string());
  LabeledClip clip;
  clip.name = field<std::string>(meta, "name");
  const std::size_t t = field<std::size_t>(meta, "frames");
  const std::size_t h = field<std::size_t>(meta, "height");
  const std::size_t w = field<std::size_t>(meta, "width");
  if (t == 0) throw FormatError("read_clip_dir: clip with zero frames in " + dir);

  std::vector<double> frames, depth, valid;
  for (std::size_t i = 0; i < t; ++i) {
    Tensor rgb = read_ppm((fs::path(dir) / "frames" / frame_name(i, ".ppm")).string());
    Tensor d = read_pfm((fs::path(dir) / "depth" / frame_name(i, ".pfm")).string());
    Tensor v = read_pfm((fs::path(dir) / "valid" / frame_name(i, ".pfm")).string());
    if (rgb.shape() != Shape{3, h, w} || d.shape() != Shape{1, h, w} ||
        v.shape() != Shape{1, h, w}) {
      throw FormatError("read_clip_dir: frame " + std::to_string(i) +
                        " does not match meta.json in " + dir);
    }
    frames.insert(frames.end(), rgb.values().begin(), rgb.values().end());
    depth.insert(depth.end(), d.values().begin(), d.values().end());
    valid.insert(valid.end(), v.values().begin(), v.values().end());
    if (i + 1 < t) {
      FlowField f = read_flo5((fs::path(dir) / "flow" / frame_name(i, ".flo5")).string());
      if (f.h != h || f.w != w) {
        throw FormatError("read_clip_dir: flow " + std::to_string(i) + " has the wrong size");
      }
      clip.flows.push_back(std::move(f));
    }
  }
  clip.frames = Tensor::from_data({t, 3, h, w}, std::move(frames));
  clip.depth = Tensor::from_data({t, 1, h, w}, std::move(depth));
  clip.valid = Tensor::from_data({t, 1, h, w}, std::move(valid));
  return clip;
}

void write_dataset(const std::string& root, const std::vector<LabeledClip>& clips) {
  if (clips.empty()) throw ConfigError("write_dataset: nothing to write");
  fs::create_directories(root);
  for (const auto& clip : clips) {
    if (clip.name.empty()) throw ConfigError("write_dataset: clip without a name");
    write_clip_dir((fs::path(root) / clip.name).string(), clip);
  }
}

std::vector<LabeledClip> read_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw IoError("read_dataset: no such directory: " + root);
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) {
      dirs.push_back(entry.path().string());
    }
  }
  if (dirs.empty()) throw FormatError("read_dataset: no clip directories under " + root);
  std::sort(dirs.begin(), dirs.end());
  std::vector<LabeledClip> clips;
  for (const auto& d : dirs) clips.push_back(read_clip_dir(d));
  return clips;
}

void save_training_state(const std::string& path, Model& model, const ModelConfig& cfg,
                         Adam& opt) {
  Checkpoint cp;
  cp.meta = {{"kind", "stabledpt-checkpoint"},
             {"model", model_config_to_json(cfg)},
             {"step", opt.step_count()},
             {"adam",
              {{"lr", opt.config().lr},
               {"beta1", opt.config().beta1},
               {"beta2", opt.config().beta2},
               {"eps", opt.config().eps}}}};
  model.visit_params([&](const std::string& name, Tensor& t) {
    cp.tensors.push_back({"param." + name, t.shape(), t.values()});
  });
  for (const auto& [name, m] : opt.moments_m()) cp.tensors.push_back({"opt.m." + name, {m.size()}, m});
  for (const auto& [name, v] : opt.moments_v()) cp.tensors.push_back({"opt.v." + name, {v.size()}, v});
  write_checkpoint(path, cp);
}

ModelConfig checkpoint_model_config(const std::string& path) {
  const Checkpoint cp = read_checkpoint(path);
  return model_config_from_json(field<nlohmann::json>(cp.meta, "model"));
}

void load_training_state(const std::string& path, Model& model, const ModelConfig& cfg,
                         Adam* opt) {
  const Checkpoint cp = read_checkpoint(path);
  if (field<nlohmann::json>(cp.meta, "model") != model_config_to_json(cfg)) {
    throw ConfigError("checkpoint " + path + " was built for a different model configuration");
  }
  model.visit_params([&](const std::string& name, Tensor& t) {
    const NamedTensor* nt = cp.find("param." + name);
    if (!nt) throw FormatError("checkpoint " + path + " is missing parameter " + name);
    if (nt->shape != t.shape()) {
      throw ShapeError("checkpoint parameter " + name + " has shape " + shape_str(nt->shape) +
                       ", expected " + shape_str(t.shape()));
    }
    t.mutable_values() = nt->data;
  });
  if (!opt) return;
  opt->moments_m().clear();
  opt->moments_v().clear();
  for (const auto& t : cp.tensors) {
    if (t.name.rfind("opt.m.", 0) == 0) opt->moments_m()[t.name.substr(6)] = t.data;
    if (t.name.rfind("opt.v.", 0) == 0) opt->moments_v()[t.name.substr(6)] = t.data;
  }
  opt->set_step_count(field<std::size_t>(cp.meta, "step"));
}

}  // namespace sdpt
