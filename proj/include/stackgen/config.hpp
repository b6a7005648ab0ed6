#pragma once

#include <cstdint>
#include <string>

namespace stackgen {

// Flat training configuration. Written/read as key=value text; unknown keys
// are rejected. Zero-valued lr/embed_dim/base_channels/gen_base/n_down mean
// "resolve from stage and image size".
struct TrainConfig {
  int stage = 1;
  int epochs = 150;
  int batch_size = 64;
  double lr = 0.0;            // default: 0.0002 (stage 1) / 0.002 (stage 2)
  double decay_factor = 0.2;
  int decay_every = 25;
  std::uint64_t seed = 1;
  int image_size = 64;        // stage-1 resolution; stage-2 output is 4x this
  int cond_dim = 128;
  int latent_dim = 100;
  int embed_dim = 0;          // default: embedding file dimension
  double lambda = 1.0;
  int base_channels = 0;      // stage-1 conv width; default 64 (>=64px) / 16
  int gen_base = 0;           // stage-2 generator width; default 64 / 16
  int n_down = 0;             // stage-2 downsampling convs; default 3 / 1
  int checkpoint_every = 10;
  std::string data_dir;
  std::string out_dir = "runs";
  std::string stage1_ckpt;    // required for stage 2
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);

// Canonical serialization: fixed key order, shortest round-trip numerals.
// parse(config_to_text(c)) == c for resolved configs.
std::string config_to_text(const TrainConfig& cfg);

// Fills stage/size-dependent defaults; validates ranges.
TrainConfig resolve_config(TrainConfig cfg);

}  // namespace stackgen
