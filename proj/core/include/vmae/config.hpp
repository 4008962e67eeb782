#pragma once

#include <string>

namespace vmae {

// Hyperparameters that determine every tensor shape in ModelParams.
struct ModelConfig {
  int image_size = 224;
  int patch_size = 16;
  int channels = 3;
  int d_enc = 768;
  int d_dec = 512;
  int enc_depth = 12;
  int dec_depth = 8;
  int n_heads_enc = 12;
  int n_heads_dec = 16;
  double mlp_ratio = 4.0;
  double mask_ratio = 0.75;
  int distill_dim = 256;  // K
  int sem_dim = 512;
  double temperature = 1.0;  // tau of the similarity distributions
  double distill_temp = 1.0;
  bool normalize_mim = true;
  bool stop_teacher_grad = false;

  int grid_side() const { return image_size / patch_size; }
  int n_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int sketch_patch_dim() const { return patch_size * patch_size; }
  int mlp_hidden(int width) const;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// 224/16, 768/512, 12/8 as in the reference architecture.
ModelConfig full_model_config();
// Desk-scale default used by the CLI: 32x32 images, patch 8.
ModelConfig desk_model_config();
// Gradient-check configuration: 32x32, patch 8, d 16/8, depths 2/1, heads 2, K 8, sem 8.
ModelConfig tiny_model_config();

}  // namespace vmae
