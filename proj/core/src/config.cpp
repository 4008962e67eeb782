#include "vmae/config.hpp"

#include "vmae/errors.hpp"

#include <cmath>
#include <sstream>

namespace vmae {

int ModelConfig::mlp_hidden(int width) const {
  return static_cast<int>(std::lround(mlp_ratio * width));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (patch_size <= 0) fail("patch_size must be positive");
  if (image_size <= 0 || image_size % patch_size != 0) {
    fail("image_size must be a positive multiple of patch_size");
  }
  if (channels != 3) fail("channels must be 3 (RGB)");
  if (d_enc <= 0 || d_dec <= 0) fail("d_enc and d_dec must be positive");
  if (enc_depth < 0 || dec_depth < 0) fail("depths must be non-negative");
  if (n_heads_enc <= 0 || d_enc % n_heads_enc != 0) fail("d_enc must be divisible by n_heads_enc");
  if (n_heads_dec <= 0 || d_dec % n_heads_dec != 0) fail("d_dec must be divisible by n_heads_dec");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  if (mlp_hidden(d_enc) < 1 || mlp_hidden(d_dec) < 1) fail("mlp hidden width rounds to zero");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in [0, 1)");
  if (distill_dim < 2) fail("distill_dim (K) must be at least 2");
  if (sem_dim < 2) fail("sem_dim must be at least 2");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (!(distill_temp > 0.0)) fail("distill_temp must be positive");
}

ModelConfig full_model_config() { return ModelConfig{}; }

ModelConfig desk_model_config() {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.d_enc = 64;
  c.d_dec = 32;
  c.enc_depth = 4;
  c.dec_depth = 2;
  c.n_heads_enc = 4;
  c.n_heads_dec = 4;
  c.distill_dim = 256;
  c.sem_dim = 64;
  return c;
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.d_enc = 16;
  c.d_dec = 8;
  c.enc_depth = 2;
  c.dec_depth = 1;
  c.n_heads_enc = 2;
  c.n_heads_dec = 2;
  c.distill_dim = 8;
  c.sem_dim = 8;
  return c;
}

}  // namespace vmae
