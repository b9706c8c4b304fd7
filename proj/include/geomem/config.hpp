#ifndef GEOMEM_CONFIG_HPP_
#define GEOMEM_CONFIG_HPP_

#include <cstdint>
#include <string>

#include "geomem/tensor.hpp"

namespace geomem {

// Token-grid and point-map extents. Pixel extents are h*patch x w*patch.
struct DimsConfig {
  int h = 4;
  int w = 4;
  int patch = 4;
  int c = 32;
  int c_g = 16;
  int c_v = 8;
  int frames = 32;
  int bands = 8;          // sinusoidal frequency bands per axis
  double pos_norm = 10.0; // room-scale normalizer (meters)

  int pixel_h() const { return h * patch; }
  int pixel_w() const { return w * patch; }
  int tokens() const { return h * w; }
};

struct MemoryConfig {
  int working_capacity = 8;
  int episodic_capacity = 32;
  std::string episodic_similarity = "pooled";  // pooled | flat
};

struct TrainConfig {
  int steps = 2000;
  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double clip_norm = 1.0;
  std::string lr_schedule = "cosine";  // cosine | constant
  int eval_interval = 200;
  int precision = 64;  // 64 | 32
  std::uint64_t seed = 42;
};

struct DataConfig {
  int episodes = 2000;
  double noise = 0.05;
  int objects_min = 6;
  int objects_max = 8;
  double room_min = 6.0;
  double room_max = 10.0;
  int vocab = 10;
  int qa_per_episode = 6;
  std::uint64_t seed = 7;
  std::uint64_t vocab_seed = 1234;
};

struct AblationConfig {
  bool rep3d = true;
  std::string injection = "adaptive";  // adaptive | uniform | off
  bool working_memory = true;
  bool episodic_memory = true;
  std::string fusion = "cross_attn";  // cross_attn | concat_mlp | add
};

struct ExperimentConfig {
  DimsConfig dims;
  MemoryConfig memory;
  TrainConfig train;
  DataConfig data;
  AblationConfig ablation;

  // Rejects unknown sections/keys with a key-level message.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  // Canonical form: fixed section/key order, round-trippable number format.
  std::string serialize() const;
  std::uint64_t hash() const;

  void validate() const;
};

std::string format_double(double v);

}  // namespace geomem

#endif  // GEOMEM_CONFIG_HPP_
