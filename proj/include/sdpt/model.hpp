#ifndef SDPT_MODEL_HPP
#define SDPT_MODEL_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sdpt/encoder.hpp"
#include "sdpt/head.hpp"
#include "sdpt/rng.hpp"
#include "sdpt/tensor.hpp"

namespace sdpt {

struct ModelConfig {
  EncoderConfig encoder;
  HeadConfig head;
  std::size_t in_channels = 3;
  std::size_t input_h = 32, input_w = 32;
  bool freeze_encoder = false;

  void validate() const;
};

// Reassembled features of a fixed keyframe set at every temporal site, so
// repeated clip inference can skip re-encoding the keyframes.
struct KeyframeCache {
  std::vector<std::size_t> indices;
  std::vector<Tensor> site_features;  // one per temporal site, (m, d_site, h, w)
};

class Model {
 public:
  Model(const ModelConfig& cfg, Rng& rng);

  // frames: (t, c, h, w); keyframes: (m, c, h, w). Returns (t, 1, h, w)
  // strictly positive inverse depth.
  Tensor forward_video(const Tensor& frames, const Tensor& keyframes);
  Tensor forward_video_cached(const Tensor& frames, const KeyframeCache& cache);
  // The clip anchors on itself: the same encoded features serve as queries
  // and keyframes, so each frame costs one encoder pass.
  Tensor forward_video_self(const Tensor& frames);
  // Per-frame mode: each frame anchors on itself, so the result for a frame
  // does not depend on which other frames share the batch.
  Tensor forward_image(const Tensor& frames);

  KeyframeCache cache_keyframes(const Tensor& video, const std::vector<std::size_t>& indices);

  void visit_params(const std::function<void(const std::string&, Tensor&)>& fn);
  std::size_t num_params();

  const ModelConfig& config() const { return cfg_; }
  EncoderParams& encoder_params() { return enc_; }
  HeadParams& head_params() { return head_; }

  // Number of frames that went through the encoder since the last reset.
  std::size_t frames_encoded() const { return frames_encoded_; }
  void reset_encode_count() { frames_encoded_ = 0; }

 private:
  FeatureVolume encode_(const Tensor& frames);
  // Reassembled streams for all sites (order = site order).
  std::vector<Tensor> streams_(const FeatureVolume& fv);
  // Streams at temporal sites only (order = cfg.head.temporal_sites).
  std::vector<Tensor> temporal_streams_(const FeatureVolume& fv);
  Tensor run_head_(std::vector<Tensor> streams, const std::vector<Tensor>& kf_streams,
                   std::size_t out_h, std::size_t out_w);

  ModelConfig cfg_;
  EncoderParams enc_;
  HeadParams head_;
  std::size_t frames_encoded_ = 0;
};

}  // namespace sdpt

#endif
