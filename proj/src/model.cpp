#include "sdpt/model.hpp"

#include <string>

#include "sdpt/errors.hpp"
#include "sdpt/ops.hpp"

namespace sdpt {

void ModelConfig::validate() const {
  encoder.validate();
  head.validate();
  if (in_channels == 0) throw ConfigError("model: in_channels must be positive");
  if (encoder.tap_indices.size() != head.feature_dims.size()) {
    throw ConfigError("model: encoder provides " + std::to_string(encoder.tap_indices.size()) +
                      " taps but head expects " + std::to_string(head.feature_dims.size()) +
                      " streams");
  }
  if (input_h % encoder.patch_size != 0 || input_w % encoder.patch_size != 0) {
    throw ConfigError("model: input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                      " not divisible by patch size " + std::to_string(encoder.patch_size));
  }
}

Model::Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  enc_ = EncoderParams::init(cfg_.encoder, cfg_.in_channels, cfg_.input_h, cfg_.input_w, rng);
  head_ = HeadParams::init(cfg_.head, cfg_.encoder.embed_dim, rng);
  if (cfg_.freeze_encoder) {
    enc_.visit("encoder", [](const std::string&, Tensor& t) { t.set_requires_grad(false); });
  }
}

FeatureVolume Model::encode_(const Tensor& frames) {
  if (frames.ndim() != 4) {
    throw ShapeError("model: expected (n, c, h, w) frames, got " + shape_str(frames.shape()));
  }
  const Shape& s = frames.shape();
  if (s[1] != cfg_.in_channels || s[2] != cfg_.input_h || s[3] != cfg_.input_w) {
    throw ShapeError("model: frames " + shape_str(s) + " do not match configured input (" +
                     std::to_string(cfg_.in_channels) + ", " + std::to_string(cfg_.input_h) +
                     ", " + std::to_string(cfg_.input_w) + ")");
  }
  frames_encoded_ += s[0];
  return encode(frames, enc_, cfg_.encoder);
}

std::vector<Tensor> Model::streams_(const FeatureVolume& fv) {
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < fv.taps.size(); ++s) {
    out.push_back(reassemble_site(fv.taps[s], s, cfg_.head, head_.reassemble[s]));
  }
  return out;
}

std::vector<Tensor> Model::temporal_streams_(const FeatureVolume& fv) {
  std::vector<Tensor> out;
  for (std::size_t site : cfg_.head.temporal_sites) {
    out.push_back(reassemble_site(fv.taps[site], site, cfg_.head, head_.reassemble[site]));
  }
  return out;
}

Tensor Model::run_head_(std::vector<Tensor> streams, const std::vector<Tensor>& kf_streams,
                        std::size_t out_h, std::size_t out_w) {
  if (kf_streams.size() != cfg_.head.temporal_sites.size()) {
    throw ShapeError("model: expected keyframe features for " +
                     std::to_string(cfg_.head.temporal_sites.size()) + " temporal sites, got " +
                     std::to_string(kf_streams.size()));
  }
  for (std::size_t k = 0; k < cfg_.head.temporal_sites.size(); ++k) {
    const std::size_t site = cfg_.head.temporal_sites[k];
    for (const auto& layer : head_.temporal[k]) {
      streams[site] = temporal_layer(streams[site], kf_streams[k], layer, cfg_.head);
    }
  }
  Tensor fused = fuse(streams, head_.fusion, cfg_.head);
  return output_head(fused, head_.out, out_h, out_w);
}

Tensor Model::forward_video(const Tensor& frames, const Tensor& keyframes) {
  FeatureVolume fv = encode_(frames);
  std::vector<Tensor> kf_streams;
  if (!cfg_.head.temporal_sites.empty()) {
    FeatureVolume kfv = encode_(keyframes);
    kf_streams = temporal_streams_(kfv);
  }
  return run_head_(streams_(fv), kf_streams, cfg_.input_h, cfg_.input_w);
}

Tensor Model::forward_video_cached(const Tensor& frames, const KeyframeCache& cache) {
  FeatureVolume fv = encode_(frames);
  return run_head_(streams_(fv), cache.site_features, cfg_.input_h, cfg_.input_w);
}

Tensor Model::forward_video_self(const Tensor& frames) {
  FeatureVolume fv = encode_(frames);
  std::vector<Tensor> streams = streams_(fv);
  std::vector<Tensor> kf;
  for (std::size_t site : cfg_.head.temporal_sites) kf.push_back(streams[site]);
  return run_head_(std::move(streams), kf, cfg_.input_h, cfg_.input_w);
}

Tensor Model::forward_image(const Tensor& frames) {
  FeatureVolume fv = encode_(frames);
  std::vector<Tensor> streams = streams_(fv);
  const std::size_t n = frames.shape()[0];

  std::vector<Tensor> per_frame;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Tensor> own;
    for (const auto& s : streams) own.push_back(slice(s, 0, i, 1));
    std::vector<Tensor> kf;
    for (std::size_t site : cfg_.head.temporal_sites) kf.push_back(own[site]);
    per_frame.push_back(run_head_(own, kf, cfg_.input_h, cfg_.input_w));
  }
  return per_frame.size() == 1 ? per_frame[0] : concat(per_frame, 0);
}

KeyframeCache Model::cache_keyframes(const Tensor& video,
                                     const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("model: keyframe cache needs at least one index");
  for (std::size_t i : indices) {
    if (i >= video.shape()[0]) {
      throw ShapeError("model: keyframe index " + std::to_string(i) + " out of range for " +
                       std::to_string(video.shape()[0]) + " frames");
    }
  }
  Tensor picked = index_select0(video, indices);
  FeatureVolume fv = encode_(picked);
  KeyframeCache cache;
  cache.indices = indices;
  cache.site_features = temporal_streams_(fv);
  return cache;
}

void Model::visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
  enc_.visit("encoder", fn);
  head_.visit("head", fn);
}

std::size_t Model::num_params() {
  std::size_t n = 0;
  visit_params([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

}  // namespace sdpt
